use serde::{Deserialize, Serialize};

use crate::env::obs::VIEW;
use crate::error::{Error, Result};
use crate::transformer::AttentionRecord;

/// Which encoder layer to read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Layer {
    #[default]
    Last,
    Index(usize),
}

impl Layer {
    pub fn resolve(self, layers: usize) -> Result<usize> {
        match self {
            Layer::Last if layers > 0 => Ok(layers - 1),
            Layer::Index(i) if i < layers => Ok(i),
            _ => Err(Error::Contract(format!("layer {self} out of range for {layers} layers"))),
        }
    }
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Layer::Last => f.write_str("last"),
            Layer::Index(i) => write!(f, "{i}"),
        }
    }
}

impl std::str::FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "last" {
            return Ok(Layer::Last);
        }
        s.parse()
            .map(Layer::Index)
            .map_err(|_| Error::Config(format!("layer must be `last` or an index, got {s:?}")))
    }
}

impl Serialize for Layer {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Layer::Last => s.serialize_str("last"),
            Layer::Index(i) => s.serialize_u64(*i as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Layer {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(Layer::Index(i)),
            Raw::Name(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    MeanHeads,
    PerHead,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-heads" => Ok(Aggregation::MeanHeads),
            "per-head" => Ok(Aggregation::PerHead),
            _ => Err(Error::Config(format!("aggregation must be mean-heads or per-head, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatmapSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub encoder: String,
    pub layer: usize,
    pub aggregation: Aggregation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
}

/// Saliency-token attention laid over the 7×7 local view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    /// `grid[r][c]` is the weight on local cell `(r, c)`, row 0 at the top.
    pub grid: Vec<Vec<f64>>,
    /// Weight the saliency token puts on itself.
    pub saliency: f64,
    pub source: HeatmapSource,
}

impl Heatmap {
    /// Builds a heatmap from a saliency row over `1 + 49` tokens.
    pub fn from_row(row: &[f64], source: HeatmapSource) -> Result<Self> {
        if row.len() != 1 + VIEW * VIEW {
            return Err(Error::Contract(format!(
                "saliency row has {} entries, expected {}",
                row.len(),
                1 + VIEW * VIEW
            )));
        }
        Ok(Self {
            grid: row[1..].chunks(VIEW).map(<[f64]>::to_vec).collect(),
            saliency: row[0],
            source,
        })
    }

    pub fn total(&self) -> f64 {
        self.saliency + self.grid.iter().flatten().sum::<f64>()
    }

    pub fn max_cell(&self) -> f64 {
        self.grid.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.grid[row][col]
    }
}

/// Reads the saliency row (row 0) of one layer. `MeanHeads` averages the
/// heads and renormalizes to sum 1; `PerHead` yields one map per head.
pub fn extract_attention(record: &AttentionRecord, layer: Layer, agg: Aggregation) -> Result<Vec<Heatmap>> {
    let l = layer.resolve(record.layers.len())?;
    let heads = record.layers[l].len();
    if heads == 0 {
        return Err(Error::Contract(format!("layer {l} of {} has no heads", record.encoder)));
    }
    let source = |head| HeatmapSource {
        variant: None,
        encoder: record.encoder.clone(),
        layer: l,
        aggregation: agg,
        head,
    };
    match agg {
        Aggregation::PerHead => (0..heads)
            .map(|h| Heatmap::from_row(record.row(l, h, 0), source(Some(h))))
            .collect(),
        Aggregation::MeanHeads => Ok(vec![Heatmap::from_row(&mean_row(record, l, 0), source(None))?]),
    }
}

/// Head-averaged, renormalized attention row.
pub fn mean_row(record: &AttentionRecord, layer: usize, row: usize) -> Vec<f64> {
    let heads = record.layers[layer].len();
    let mut mean = vec![0.0; record.tokens];
    for h in 0..heads {
        for (m, w) in mean.iter_mut().zip(record.row(layer, h, row)) {
            *m += w / heads as f64;
        }
    }
    let total: f64 = mean.iter().sum();
    if total > 0.0 {
        mean.iter_mut().for_each(|m| *m /= total);
    }
    mean
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapFormat {
    #[default]
    Csv,
    Pgm,
}

impl HeatmapFormat {
    pub fn extension(self) -> &'static str {
        match self {
            HeatmapFormat::Csv => "csv",
            HeatmapFormat::Pgm => "pgm",
        }
    }
}

impl std::str::FromStr for HeatmapFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(HeatmapFormat::Csv),
            "pgm" => Ok(HeatmapFormat::Pgm),
            _ => Err(Error::Contract(format!("unknown heatmap format {s:?}"))),
        }
    }
}

/// Renders a heatmap.
///
/// CSV: seven rows of seven weights with six fractional digits, then
/// `saliency,<weight>`. PGM: plain `P2` 7×7 image, maxval 255, each pixel
/// `round(255·w / max_w)` with `max_w` the largest cell weight.
pub fn render_heatmap(h: &Heatmap, format: HeatmapFormat) -> Vec<u8> {
    let mut out = String::new();
    match format {
        HeatmapFormat::Csv => {
            for row in &h.grid {
                let cells: Vec<String> = row.iter().map(|w| format!("{w:.6}")).collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
            out.push_str(&format!("saliency,{:.6}\n", h.saliency));
        }
        HeatmapFormat::Pgm => {
            let max = h.max_cell();
            out.push_str(&format!("P2\n{VIEW} {VIEW}\n255\n"));
            for row in &h.grid {
                let px: Vec<String> = row
                    .iter()
                    .map(|&w| {
                        let v = if max > 0.0 { (255.0 * w / max).round() } else { 0.0 };
                        (v as u8).to_string()
                    })
                    .collect();
                out.push_str(&px.join(" "));
                out.push('\n');
            }
        }
    }
    out.into_bytes()
}

/// Parses the CSV rendering back into `(grid, saliency)`.
pub fn parse_heatmap_csv(text: &str) -> Result<(Vec<Vec<f64>>, f64)> {
    let bad = |line: usize, m: String| Error::Parse {
        line,
        column: 1,
        message: m,
    };
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != VIEW + 1 {
        return Err(bad(lines.len(), format!("expected {} lines", VIEW + 1)));
    }
    let num = |line: usize, s: &str| s.trim().parse::<f64>().map_err(|_| bad(line, format!("bad number {s:?}")));
    let grid = lines[..VIEW]
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let row = l.split(',').map(|s| num(i + 1, s)).collect::<Result<Vec<_>>>()?;
            if row.len() != VIEW {
                return Err(bad(i + 1, format!("expected {VIEW} values")));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let saliency = lines[VIEW]
        .strip_prefix("saliency,")
        .ok_or_else(|| bad(VIEW + 1, "missing saliency line".into()))?;
    Ok((grid, num(VIEW + 1, saliency)?))
}
