//! Configuration export as JSON or SVG drawings.
//!
//! 2D packings are drawn from above. 3D packings get a front view (what is
//! visible looking along -x, i.e. the frontier) followed by one top-down
//! slice per z layer. Colors follow placement order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Configuration, Dims, PlacedBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Json,
    Svg,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ExportFormat::Json),
            "svg" => Ok(ExportFormat::Svg),
            _ => Err(Error::Parse(format!("unknown export format {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedBox {
    pub index: usize,
    pub order: usize,
    pub orientation: usize,
    pub x: u32,
    pub y: u32,
    pub z: u32,
    pub l: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedConfiguration {
    pub instance_id: String,
    pub dims: Dims,
    /// `[L, W, H]` of the bin the episode ran in.
    pub bin: [u32; 3],
    pub extent: u32,
    pub utility: Option<f64>,
    pub boxes: Vec<ExportedBox>,
}

impl ExportedConfiguration {
    pub fn from_configuration(c: &Configuration) -> Result<Self> {
        let placed = c.placed_boxes()?;
        let bin = c.instance.bin;
        Ok(Self {
            instance_id: c.instance.id.clone(),
            dims: bin.dims,
            bin: [bin.length, bin.width, bin.height],
            extent: placed.iter().map(|p| p.x_end()).max().unwrap_or(0),
            utility: c.is_complete().then(|| c.utility()).transpose()?,
            boxes: placed
                .iter()
                .enumerate()
                .map(|(order, p)| ExportedBox {
                    index: p.index,
                    order,
                    orientation: p.orientation,
                    x: p.x,
                    y: p.y,
                    z: p.z,
                    l: p.dims.l,
                    w: p.dims.w,
                    h: p.dims.h,
                })
                .collect(),
        })
    }
}

const CELL: u32 = 16;
const GAP: u32 = 24;

fn color(order: usize, total: usize) -> String {
    let hue = 360.0 * order as f64 / total.max(1) as f64;
    format!("hsl({hue:.0},65%,60%)")
}

fn rect(svg: &mut String, x: u32, y: u32, w: u32, h: u32, fill: &str, label: Option<usize>) {
    let _ = write!(
        svg,
        r#"<rect x="{x}" y="{y}" width="{w}" height="{h}" fill="{fill}" stroke="black" stroke-width="1"/>"#
    );
    if let Some(l) = label {
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">{l}</text>"#,
            x + w / 2,
            y + h / 2 + 4
        );
    }
    svg.push('\n');
}

fn frame(svg: &mut String, ox: u32, oy: u32, w: u32, h: u32, title: &str) {
    let _ = writeln!(
        svg,
        r#"<rect x="{ox}" y="{oy}" width="{w}" height="{h}" fill="white" stroke="gray"/><text x="{ox}" y="{}" font-size="11">{title}</text>"#,
        oy.saturating_sub(4)
    );
}

/// Renders one configuration. Boxes are labelled with their placement order.
pub fn render_svg(c: &Configuration) -> Result<String> {
    let placed = c.placed_boxes()?;
    let bin = c.instance.bin;
    let n = placed.len();
    let extent = placed.iter().map(|p| p.x_end()).max().unwrap_or(0).max(1);
    let mut body = String::new();
    let (width, height);
    match bin.dims {
        Dims::Two => {
            let (ox, oy) = (GAP, GAP);
            frame(&mut body, ox, oy, extent * CELL, bin.width * CELL, "top view (x right, y down)");
            for (k, p) in placed.iter().enumerate() {
                rect(&mut body, ox + p.x * CELL, oy + p.y * CELL, p.dims.l * CELL, p.dims.w * CELL, &color(k, n), Some(k));
            }
            width = extent * CELL + 2 * GAP;
            height = bin.width * CELL + 2 * GAP;
        }
        Dims::Three => {
            // front view: the box with the largest x end at each (y, z)
            let (ox, oy) = (GAP, GAP);
            frame(&mut body, ox, oy, bin.width * CELL, bin.height * CELL, "front view (y right, z up)");
            for y in 0..bin.width {
                for z in 0..bin.height {
                    let front = placed
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| p.y <= y && y < p.y_end() && p.z <= z && z < p.z_end())
                        .max_by_key(|(_, p)| p.x_end());
                    if let Some((k, _)) = front {
                        let top = oy + (bin.height - 1 - z) * CELL;
                        rect(&mut body, ox + y * CELL, top, CELL, CELL, &color(k, n), None);
                    }
                }
            }
            let slice_w = extent * CELL;
            let mut sx = ox + bin.width * CELL + GAP;
            let layers = placed.iter().map(PlacedBox::z_end).max().unwrap_or(0);
            for z in 0..layers {
                frame(&mut body, sx, oy, slice_w, bin.width * CELL, &format!("z = {z}"));
                for (k, p) in placed.iter().enumerate().filter(|(_, p)| p.z <= z && z < p.z_end()) {
                    rect(&mut body, sx + p.x * CELL, oy + p.y * CELL, p.dims.l * CELL, p.dims.w * CELL, &color(k, n), Some(k));
                }
                sx += slice_w + GAP;
            }
            width = sx;
            height = bin.width.max(bin.height) * CELL + 2 * GAP;
        }
    }
    Ok(format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\">\n<title>{}</title>\n{body}</svg>\n",
        c.instance.id
    ))
}

fn file_stem(id: &str, i: usize) -> String {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{i:05}-{clean}")
}

/// Writes one file per configuration (SVG) or a single
/// `configurations.json`; returns the paths written.
pub fn write_configurations(configs: &[Configuration], format: ExportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    match format {
        ExportFormat::Json => {
            let items = configs
                .iter()
                .map(ExportedConfiguration::from_configuration)
                .collect::<Result<Vec<_>>>()?;
            let path = dir.join("configurations.json");
            fs::write(&path, serde_json::to_string_pretty(&items)?)?;
            Ok(vec![path])
        }
        ExportFormat::Svg => configs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let path = dir.join(format!("{}.svg", file_stem(&c.instance.id, i)));
                fs::write(&path, render_svg(c)?)?;
                Ok(path)
            })
            .collect(),
    }
}
