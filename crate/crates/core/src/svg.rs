//! A small wavedrom-style SVG renderer.
//!
//! Geometry: a header row (cycle numbers and band markers) followed by one
//! 30-unit row per lane; each cycle is `40 * hscale` units wide. Every
//! primitive carries a class so tests can count strokes by kind.

use std::fmt::Write;

use crate::wavejson::{WaveDocument, WaveLane};

const ROW: u32 = 30;
const HIGH: u32 = 6;
const LOW: u32 = 24;
const MID: u32 = 15;
const PAD: u32 = 10;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
enum RunKind {
    Level(char),
    Data(String),
    Clock(bool),
}

/// Splits a lane into maximal runs of (start cycle, length, kind).
fn runs(lane: &WaveLane) -> Vec<(usize, usize, RunKind)> {
    let mut data = lane.data.iter().flatten();
    let mut out: Vec<(usize, usize, RunKind)> = Vec::new();
    for (i, c) in lane.wave.chars().enumerate() {
        let kind = match c {
            '.' => {
                if let Some(last) = out.last_mut() {
                    last.1 += 1;
                }
                continue;
            }
            'p' => RunKind::Clock(true),
            'n' => RunKind::Clock(false),
            '=' => RunKind::Data(data.next().cloned().unwrap_or_default()),
            c => RunKind::Level(c),
        };
        out.push((i, 1, kind));
    }
    out
}

fn level_y(c: char) -> u32 {
    match c {
        '1' => HIGH,
        '0' => LOW,
        _ => MID,
    }
}

/// Renders a document to SVG 1.1 text.
pub fn render_svg(doc: &WaveDocument) -> String {
    let col = 40 * doc.hscale.max(1);
    let cycles = doc.num_cycles() as u32;
    let longest = doc.lanes.iter().map(|l| l.name.chars().count()).max().unwrap_or(0) as u32;
    let name_w = (longest * 8 + 2 * PAD).max(40);
    let width = name_w + col * cycles + PAD;
    let height = ROW * (doc.lanes.len() as u32 + 1) + PAD;

    let mut s = String::with_capacity(512 + 256 * doc.lanes.len() * cycles.max(1) as usize);
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="monospace" font-size="12">"#
    );
    s.push_str(concat!(
        r#"<defs><pattern id="hatch" width="6" height="6" patternUnits="userSpaceOnUse" patternTransform="rotate(45)">"#,
        r##"<line x1="0" y1="0" x2="0" y2="6" stroke="#888" stroke-width="2"/></pattern></defs>"##,
        r#"<rect width="100%" height="100%" fill="white"/>"#
    ));

    // Header: cycle numbers (1-indexed, as questions refer to them) and bands.
    s.push_str(r#"<g class="header">"#);
    for c in 0..cycles {
        let x = name_w + c * col;
        let _ = write!(
            s,
            r##"<line class="grid" x1="{x}" y1="{ROW}" x2="{x}" y2="{}" stroke="#eee"/><text class="cycle" x="{}" y="12" fill="#999" text-anchor="middle">{}</text>"##,
            height - PAD,
            x + col / 2,
            c + 1
        );
    }
    for band in &doc.bands {
        let x = name_w + band.start as u32 * col;
        let w = (band.end - band.start + 1) as u32 * col;
        let _ = write!(
            s,
            r##"<rect class="band" x="{x}" y="16" width="{w}" height="12" fill="#4a90d9" fill-opacity="0.15"/><text class="band-label" x="{}" y="26" fill="#245" text-anchor="middle">{}</text>"##,
            x + w / 2,
            escape(&band.label)
        );
    }
    s.push_str("</g>");

    for (row, lane) in doc.lanes.iter().enumerate() {
        let y0 = ROW * (row as u32 + 1);
        let _ = write!(
            s,
            r#"<g class="lane" transform="translate(0,{y0})"><text class="name" x="{PAD}" y="{}">{}</text>"#,
            MID + 4,
            escape(&lane.name)
        );
        let lane_runs = runs(lane);
        let mut prev_level: Option<char> = None;
        for (start, len, kind) in &lane_runs {
            let x0 = name_w + *start as u32 * col;
            let x1 = x0 + *len as u32 * col;
            match kind {
                RunKind::Clock(rising) => {
                    let (first, second) = if *rising { (HIGH, LOW) } else { (LOW, HIGH) };
                    let mut d = String::new();
                    for k in 0..*len as u32 {
                        let a = x0 + k * col;
                        let m = a + col / 2;
                        let _ = write!(d, "M{a},{second} L{a},{first} L{m},{first} L{m},{second} L{},{second} ", a + col);
                    }
                    let _ = write!(
                        s,
                        r#"<path class="clock" d="{}" fill="none" stroke="black" stroke-width="1.5"/>"#,
                        d.trim_end()
                    );
                    prev_level = None;
                }
                RunKind::Level(c) => {
                    let y = level_y(*c);
                    if let Some(p) = prev_level {
                        let _ = write!(
                            s,
                            r#"<line class="transition" x1="{x0}" y1="{}" x2="{x0}" y2="{y}" stroke="black" stroke-width="1.5"/>"#,
                            level_y(p)
                        );
                    }
                    if *c == 'x' {
                        let _ = write!(
                            s,
                            r#"<rect class="x" x="{x0}" y="{HIGH}" width="{}" height="{}" fill="url(#hatch)" stroke="black"/>"#,
                            x1 - x0,
                            LOW - HIGH
                        );
                    } else {
                        let class = if *c == 'z' { "z" } else { "level" };
                        let color = if *c == 'z' { "#0058ff" } else { "black" };
                        let _ = write!(
                            s,
                            r#"<line class="{class}" x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="{color}" stroke-width="1.5"/>"#
                        );
                    }
                    prev_level = Some(*c);
                }
                RunKind::Data(label) => {
                    let e = 4.min(col / 4);
                    let _ = write!(
                        s,
                        r#"<polygon class="data" points="{x0},{MID} {},{HIGH} {},{HIGH} {x1},{MID} {},{LOW} {},{LOW}" fill="white" stroke="black" stroke-width="1.5"/><text class="label" x="{}" y="{}" text-anchor="middle">{}</text>"#,
                        x0 + e,
                        x1 - e,
                        x1 - e,
                        x0 + e,
                        (x0 + x1) / 2,
                        MID + 4,
                        escape(label)
                    );
                    prev_level = None;
                }
            }
        }
        s.push_str("</g>");
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(lanes: Vec<WaveLane>) -> WaveDocument {
        WaveDocument {
            lanes,
            hscale: 1,
            bands: vec![],
        }
    }

    fn lane(name: &str, wave: &str) -> WaveLane {
        WaveLane {
            name: name.into(),
            wave: wave.into(),
            data: None,
            width: None,
        }
    }

    #[test]
    fn single_lane_transition_strokes() {
        let svg = render_svg(&doc(vec![lane("a", "0101")]));
        assert_eq!(svg.matches(r#"class="transition""#).count(), 3);
        assert_eq!(svg.matches(r#"class="lane""#).count(), 1);
    }

    #[test]
    fn empty_document_has_header_only() {
        let svg = render_svg(&doc(vec![]));
        assert!(svg.contains(r#"class="header""#));
        assert_eq!(svg.matches(r#"class="lane""#).count(), 0);
    }

    #[test]
    fn escapes_names_and_labels() {
        let mut d = lane("a<b>", "=.");
        d.data = Some(vec!["R&W".into()]);
        let svg = render_svg(&doc(vec![d]));
        assert!(svg.contains("a&lt;b&gt;"));
        assert!(svg.contains("R&amp;W"));
    }

    #[test]
    fn hscale_sets_column_width() {
        let mut d = doc(vec![lane("a", "01")]);
        d.hscale = 2;
        let svg = render_svg(&d);
        // name column 40 + 2 cycles * 80 + pad
        assert!(svg.contains(r#"width="210""#));
    }
}
