//! Static SVG figures: grid localization scatter, time-colored tracks,
//! and sensitivity heatmap overlays.

use super::{EvalItem, Track};
use crate::image::ImageGrid;

fn hsl_to_rgb(h: f64, s: f64, l: f64) -> (u8, u8, u8) {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = (h % 360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    (
        ((r + m) * 255.0) as u8,
        ((g + m) * 255.0) as u8,
        ((b + m) * 255.0) as u8,
    )
}

fn color(h: f64) -> String {
    let (r, g, b) = hsl_to_rgb(h, 0.75, 0.45);
    format!("#{r:02x}{g:02x}{b:02x}")
}

struct SceneAxes {
    width: f64,
    height: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl SceneAxes {
    /// Map scene meters to SVG coordinates: the corridor x axis points
    /// right, the column axis (scene -y) points up the page.
    fn to_svg(&self, x: f64, y: f64) -> (f64, f64) {
        let sx = (x - self.x_range.0) / (self.x_range.1 - self.x_range.0) * self.width;
        let sy = (y - self.y_range.0) / (self.y_range.1 - self.y_range.0) * self.height;
        (sx, sy)
    }
}

/// Scatter of predicted positions, colored by their ground-truth grid
/// cell, with a plus marker per cell center.
pub fn grid_scatter_svg(items: &[EvalItem]) -> String {
    let axes = SceneAxes {
        width: 560.0,
        height: 560.0,
        x_range: (0.0, 0.55),
        y_range: (-0.55, 0.0),
    };
    let mut cells: Vec<(usize, usize)> = items.iter().filter_map(|i| i.grid).collect();
    cells.sort_unstable();
    cells.dedup();
    let hue_of = |cell: (usize, usize)| -> f64 {
        let idx = cells.iter().position(|&c| c == cell).unwrap_or(0);
        idx as f64 * 360.0 / cells.len().max(1) as f64
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        axes.width, axes.height, axes.width, axes.height
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    for item in items {
        let hue = item.grid.map(hue_of).unwrap_or(0.0);
        let (cx, cy) = axes.to_svg(item.predicted_xy.0, item.predicted_xy.1);
        svg.push_str(&format!(
            "<circle cx=\"{cx:.1}\" cy=\"{cy:.1}\" r=\"2.2\" fill=\"{}\" fill-opacity=\"0.55\"/>\n",
            color(hue)
        ));
    }
    // Ground-truth cell centers as plus signs, drawn over the dots.
    let mut seen = std::collections::BTreeSet::new();
    for item in items {
        let Some(cell) = item.grid else { continue };
        if !seen.insert(cell) {
            continue;
        }
        let (cx, cy) = axes.to_svg(item.true_xy.0, item.true_xy.1);
        let c = color(hue_of(cell));
        svg.push_str(&format!(
            "<path d=\"M {x0:.1} {cy:.1} H {x1:.1} M {cx:.1} {y0:.1} V {y1:.1}\" stroke=\"{c}\" stroke-width=\"2.4\"/>\n",
            x0 = cx - 6.0,
            x1 = cx + 6.0,
            y0 = cy - 6.0,
            y1 = cy + 6.0,
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Track polyline with time running through the hue wheel, plus an
/// optional ground-truth path in gray.
pub fn track_svg(track: &Track, truth: Option<&[(f64, f64)]>) -> String {
    let axes = SceneAxes {
        width: 560.0,
        height: 560.0,
        x_range: (0.0, 0.55),
        y_range: (-0.55, 0.0),
    };
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        axes.width, axes.height, axes.width, axes.height
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    if let Some(truth) = truth {
        let points: Vec<String> = truth
            .iter()
            .map(|&(x, y)| {
                let (sx, sy) = axes.to_svg(x, y);
                format!("{sx:.1},{sy:.1}")
            })
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#bbbbbb\" stroke-width=\"2\"/>\n",
            points.join(" ")
        ));
    }

    let n = track.points.len();
    for w in track.points.windows(2) {
        let hue = 300.0 * w[0].frame as f64 / n.max(1) as f64;
        let (x0, y0) = axes.to_svg(w[0].x, w[0].y);
        let (x1, y1) = axes.to_svg(w[1].x, w[1].y);
        svg.push_str(&format!(
            "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x1:.1}\" y2=\"{y1:.1}\" stroke=\"{}\" stroke-width=\"2.2\"/>\n",
            color(hue)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Heatmap as colored cells, brightest at the maximum.
pub fn heatmap_svg(map: &ImageGrid) -> String {
    let (w, h) = (map.width(), map.height());
    let cell = 8.0;
    let max = map.max_value().max(1e-12);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        w as f64 * cell,
        h as f64 * cell,
        w as f64 * cell,
        h as f64 * cell
    ));
    for row in 0..h {
        for col in 0..w {
            let v = (map.get(0, row, col) / max).clamp(0.0, 1.0) as f64;
            let (r, g, b) = hsl_to_rgb(240.0 - 240.0 * v, 0.9, 0.15 + 0.45 * v);
            svg.push_str(&format!(
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"#{r:02x}{g:02x}{b:02x}\"/>\n",
                col as f64 * cell,
                row as f64 * cell
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Range;

    #[test]
    fn svg_outputs_are_well_formed() {
        let items = vec![EvalItem {
            id: 0,
            true_xy: (0.1, -0.12),
            predicted_xy: (0.11, -0.13),
            true_class: 0,
            predicted_class: 0,
            grid: Some((0, 0)),
        }];
        let svg = grid_scatter_svg(&items);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("circle"));

        let track = Track {
            points: (0..5)
                .map(|f| super::super::TrackPoint {
                    frame: f,
                    x: 0.1 + f as f64 * 0.02,
                    y: -0.2,
                })
                .collect(),
        };
        let svg = track_svg(&track, Some(&[(0.1, -0.2), (0.2, -0.2)]));
        assert!(svg.contains("polyline") && svg.contains("line"));

        let map = ImageGrid::new(2, 2, 1, Range::Linear, vec![0.0, 0.5, 1.0, 0.2]).unwrap();
        let svg = heatmap_svg(&map);
        assert_eq!(svg.matches("<rect").count(), 4);
    }
}
