//! Minimal self-contained SVG bar charts for the evaluation reports.

use std::fmt::Write as _;

/// One bar per (category, series) pair, grouped by category.
#[derive(Debug, Clone, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub categories: Vec<String>,
    /// (series name, one value per category)
    pub series: Vec<(String, Vec<f64>)>,
    /// Fixed upper bound of the y axis; `None` scales to the data.
    pub y_max: Option<f64>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 70.0;
const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Rounds up to 1, 2 or 5 times a power of ten.
fn nice_ceiling(v: f64) -> f64 {
    if !(v > 0.0) || !v.is_finite() {
        return 1.0;
    }
    let p = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * p)
        .find(|&c| c >= v * (1.0 - 1e-12))
        .unwrap_or(10.0 * p)
}

impl BarChart {
    pub fn render(&self) -> String {
        let data_max = self
            .series
            .iter()
            .flat_map(|(_, v)| v.iter().copied())
            .filter(|v| v.is_finite())
            .fold(0.0_f64, f64::max);
        let y_max = self.y_max.unwrap_or_else(|| nice_ceiling(data_max));
        let plot_w = WIDTH - MARGIN_L - MARGIN_R;
        let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
        let y = |v: f64| MARGIN_T + plot_h * (1.0 - (v / y_max).clamp(0.0, 1.0));

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );

        for i in 0..=5 {
            let v = y_max * i as f64 / 5.0;
            let yy = y(v);
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN_L}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="#ddd"/>"##,
                WIDTH - MARGIN_R
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                MARGIN_L - 6.0,
                yy + 4.0,
                format_tick(v)
            );
        }
        let _ = writeln!(
            s,
            r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            MARGIN_T + plot_h / 2.0,
            escape(&self.y_label)
        );

        let n_cat = self.categories.len().max(1);
        let n_ser = self.series.len().max(1);
        let group_w = plot_w / n_cat as f64;
        let bar_w = group_w * 0.8 / n_ser as f64;
        for (c, cat) in self.categories.iter().enumerate() {
            let gx = MARGIN_L + c as f64 * group_w + group_w * 0.1;
            for (k, (name, values)) in self.series.iter().enumerate() {
                let v = values.get(c).copied().unwrap_or(f64::NAN);
                if !v.is_finite() {
                    continue;
                }
                let top = y(v);
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{}: {}</title></rect>"#,
                    gx + k as f64 * bar_w,
                    bar_w.max(1.0) - 1.0,
                    MARGIN_T + plot_h - top,
                    PALETTE[k % PALETTE.len()],
                    escape(name),
                    format_tick(v)
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                gx + group_w * 0.4,
                MARGIN_T + plot_h + 18.0,
                escape(cat)
            );
        }
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_L}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#333"/>"##,
            MARGIN_T + plot_h,
            WIDTH - MARGIN_R,
            MARGIN_T + plot_h
        );

        if self.series.len() > 1 {
            for (k, (name, _)) in self.series.iter().enumerate() {
                let lx = MARGIN_L + k as f64 * 130.0;
                let ly = HEIGHT - 20.0;
                let _ = writeln!(
                    s,
                    r#"<rect x="{lx:.1}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{ly:.1}">{}</text>"#,
                    ly - 10.0,
                    PALETTE[k % PALETTE.len()],
                    lx + 16.0,
                    escape(name)
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

fn format_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_one_rect_per_bar() {
        let chart = BarChart {
            title: "a < b".into(),
            y_label: "accuracy".into(),
            categories: vec!["x".into(), "y".into()],
            series: vec![("s1".into(), vec![0.5, 1.0]), ("s2".into(), vec![0.25, f64::NAN])],
            y_max: Some(1.0),
        };
        let svg = chart.render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<title>").count(), 3);
        assert!(svg.contains("a &lt; b"));
    }

    #[test]
    fn nice_ceiling_steps() {
        assert_eq!(nice_ceiling(0.0031), 0.005);
        assert_eq!(nice_ceiling(0.9), 1.0);
        assert_eq!(nice_ceiling(1.0), 1.0);
        assert_eq!(nice_ceiling(13.0), 20.0);
        assert_eq!(format_tick(0.25), "0.25");
        assert_eq!(format_tick(0.0), "0");
    }
}
