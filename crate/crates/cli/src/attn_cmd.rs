//! `attn-dump`: run sequences through a checkpoint and export the realized
//! attention weights — CSV always, SVG heatmaps on request.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;

use taltpp_core::checkpoint::Checkpoint;
use taltpp_core::data::load_sequences;
use taltpp_core::nn::Tensor;
use taltpp_core::nn::Tape;
use taltpp_core::trace::Trace;

use crate::common::{ensure_dir, prepare_against};

#[derive(Args, Debug)]
pub struct AttnArgs {
    /// checkpoint.json from a training run.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSONL file of event sequences to probe.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory, one CSV per sequence.
    #[arg(long)]
    pub out: PathBuf,
    /// Dump at most this many sequences.
    #[arg(long, default_value_t = 4)]
    pub max_seqs: usize,
    /// Also render an SVG heatmap per event-attention site.
    #[arg(long)]
    pub svg: bool,
}

pub fn run(args: &AttnArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let (model, vocab, scaler, range) = ckpt.restore()?;
    let data = load_sequences(&args.data)
        .with_context(|| format!("loading {}", args.data.display()))?;
    let prepared = prepare_against(&data, &ckpt.type_names, &vocab, &scaler)?;
    ensure_dir(&args.out)?;

    let mut csvs = 0usize;
    let mut svgs = 0usize;
    for prep in prepared.iter().take(args.max_seqs) {
        let tape = Tape::new();
        let mut trace = Trace::new();
        model.forward_sequence(&tape, prep, &range, None, Some(&mut trace))?;

        let stem = sanitize(&prep.seq_id);
        write_csv(&args.out.join(format!("{stem}.csv")), &trace)?;
        csvs += 1;

        if args.svg {
            for capture in &trace {
                // Fusion captures are one-element maps; only the event
                // attention has structure worth a picture.
                if !capture.site.starts_with("event-attn") {
                    continue;
                }
                let path = args
                    .out
                    .join(format!("{stem}_{}.svg", sanitize(&capture.site)));
                std::fs::write(&path, svg_heatmap(&capture.site, &capture.head_weights))
                    .with_context(|| format!("writing {}", path.display()))?;
                svgs += 1;
            }
        }
    }
    println!(
        "wrote {csvs} attention CSVs{} to {}",
        if args.svg {
            format!(" and {svgs} SVGs")
        } else {
            String::new()
        },
        args.out.display()
    );
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_csv(path: &Path, trace: &Trace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["site", "head", "row", "col", "weight"])?;
    for capture in trace {
        for (head, weights) in capture.head_weights.iter().enumerate() {
            for r in 0..weights.rows() {
                for c in 0..weights.cols() {
                    w.write_record([
                        capture.site.as_str(),
                        &head.to_string(),
                        &r.to_string(),
                        &c.to_string(),
                        // `{}` prints the shortest digits that parse back
                        // exactly, keeping reruns byte-identical.
                        &format!("{}", weights.at(r, c)),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Heads side by side, one cell per (query, key), darker = more weight.
fn svg_heatmap(site: &str, heads: &[Tensor]) -> String {
    const CELL: usize = 8;
    const GAP: usize = 12;
    const TOP: usize = 18;
    let rows = heads.first().map_or(0, Tensor::rows);
    let cols = heads.first().map_or(0, Tensor::cols);
    let width = heads.len() * (cols * CELL + GAP);
    let height = TOP + rows * CELL;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n<text x=\"2\" y=\"13\" font-family=\"monospace\" \
         font-size=\"11\">{site}</text>\n"
    );
    for (h, weights) in heads.iter().enumerate() {
        let x0 = h * (cols * CELL + GAP);
        for r in 0..weights.rows() {
            for c in 0..weights.cols() {
                let w = weights.at(r, c).clamp(0.0, 1.0);
                out.push_str(&format!(
                    "<rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{}\"/>\n",
                    x0 + c * CELL,
                    TOP + r * CELL,
                    shade(w)
                ));
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Linear ramp from near-white to deep blue.
fn shade(w: f64) -> String {
    let lerp = |a: f64, b: f64| (a + (b - a) * w).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(247.0, 8.0),
        lerp(251.0, 48.0),
        lerp(255.0, 107.0)
    )
}
