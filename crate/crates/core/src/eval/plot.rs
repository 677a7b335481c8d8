use std::fmt::Write;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlotError {
    #[error("{probabilities} probabilities but {labels} labels")]
    LengthMismatch { probabilities: usize, labels: usize },
    #[error("nothing to plot")]
    Empty,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 300.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 45.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Probability-versus-step chart as a standalone SVG document: predicted
/// probabilities as a green polyline over red bands marking the ground-truth
/// mistake steps.
pub fn render_score_plot(title: &str, probabilities: &[f64], labels: &[bool]) -> Result<String, PlotError> {
    if probabilities.len() != labels.len() {
        return Err(PlotError::LengthMismatch {
            probabilities: probabilities.len(),
            labels: labels.len(),
        });
    }
    let steps = probabilities.len();
    if steps == 0 {
        return Err(PlotError::Empty);
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let band = plot_w / steps as f64;
    // step t occupies [t, t+1) on the x axis; its point sits at the centre
    let x = |t: f64| LEFT + t * band;
    let y = |p: f64| TOP + (1.0 - p.clamp(0.0, 1.0)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    let _ = writeln!(svg, r#"<g class="truth" fill="red" fill-opacity="0.25">"#);
    let mut t = 0;
    while t < steps {
        if labels[t] {
            let start = t;
            while t < steps && labels[t] {
                t += 1;
            }
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{TOP:.2}" width="{:.2}" height="{plot_h:.2}"/>"#,
                x(start as f64),
                (t - start) as f64 * band
            );
        } else {
            t += 1;
        }
    }
    let _ = writeln!(svg, "</g>");

    let _ = writeln!(svg, r#"<g class="axes" stroke="black" fill="none">"#);
    let _ = writeln!(
        svg,
        r#"<polyline points="{LEFT:.2},{TOP:.2} {LEFT:.2},{:.2} {:.2},{:.2}"/>"#,
        TOP + plot_h,
        LEFT + plot_w,
        TOP + plot_h
    );
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r#"<g class="ticks" fill="black">"#);
    for p in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{p:.1}</text>"#,
            LEFT - 6.0,
            y(p) + 4.0
        );
    }
    let stride = (steps / 8).max(1);
    for s in (0..steps).step_by(stride) {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{s}</text>"#,
            x(s as f64 + 0.5),
            TOP + plot_h + 16.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">step</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">mistake probability</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    let _ = writeln!(svg, "</g>");

    let points: Vec<String> = probabilities
        .iter()
        .enumerate()
        .map(|(t, &p)| format!("{:.2},{:.2}", x(t as f64 + 0.5), y(p)))
        .collect();
    let _ = writeln!(
        svg,
        r#"<polyline class="prediction" fill="none" stroke="green" stroke-width="2" points="{}"/>"#,
        points.join(" ")
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}
