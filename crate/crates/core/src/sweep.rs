//! Grid sweeps over ρ, α and T₁ with CSV output.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{flicker_index, low_band_similarity, psnr};
use crate::pipeline::{generate, prepare, PipelineConfig};
use crate::synth::{synth_video, SyntheticSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub rho: Vec<f64>,
    pub alpha: Vec<f64>,
    pub t1: Vec<usize>,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.rho.is_empty() || self.alpha.is_empty() || self.t1.is_empty() {
            return Err(Error::param("every sweep grid needs at least one value"));
        }
        Ok(())
    }

    /// Cells in row order: ρ outer, α middle, T₁ inner.
    pub fn cells(&self) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::with_capacity(self.rho.len() * self.alpha.len() * self.t1.len());
        for &r in &self.rho {
            for &a in &self.alpha {
                for &t in &self.t1 {
                    out.push((r, a, t));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub rho: f64,
    pub alpha: f64,
    pub t1: usize,
    /// Metrics, or the error message of a failed cell.
    pub outcome: std::result::Result<CellMetrics, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub flicker_index: f64,
    pub psnr_to_target: f64,
    pub low_band_similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

pub const CSV_HEADER: [&str; 8] = [
    "rho",
    "alpha",
    "t1",
    "status",
    "flicker_index",
    "psnr_to_target",
    "low_band_similarity",
    "error",
];

/// Six significant digits in plain decimal notation, scientific outside `[1e-4, 1e6)`.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{v:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn round_sig6(v: f64) -> f64 {
    format_sig6(v).parse().expect("formatted float parses")
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            let mut rec = vec![format_sig6(r.rho), format_sig6(r.alpha), r.t1.to_string()];
            match &r.outcome {
                Ok(m) => {
                    rec.push("ok".into());
                    rec.push(format_sig6(m.flicker_index));
                    rec.push(format_sig6(m.psnr_to_target));
                    rec.push(format_sig6(m.low_band_similarity));
                    rec.push(String::new());
                }
                Err(e) => {
                    rec.extend(["failed".into(), String::new(), String::new(), String::new(), e.clone()]);
                }
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv writer emits utf-8"))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<SweepTable> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(Error::param(format!("unexpected sweep header {header:?}")));
        }
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::param(format!("bad number {s:?}"))) };
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let outcome = match &rec[3] {
                "ok" => Ok(CellMetrics {
                    flicker_index: num(&rec[4])?,
                    psnr_to_target: num(&rec[5])?,
                    low_band_similarity: num(&rec[6])?,
                }),
                "failed" => Err(rec[7].to_string()),
                other => return Err(Error::param(format!("bad status {other:?}"))),
            };
            rows.push(SweepRow {
                rho: num(&rec[0])?,
                alpha: num(&rec[1])?,
                t1: rec[2]
                    .parse()
                    .map_err(|_| Error::param(format!("bad t1 {:?}", &rec[2])))?,
                outcome,
            });
        }
        Ok(SweepTable { rows })
    }

    /// The table as it reads back from CSV: every real value rounded to six significant digits.
    pub fn rounded(&self) -> SweepTable {
        SweepTable {
            rows: self
                .rows
                .iter()
                .map(|r| SweepRow {
                    rho: round_sig6(r.rho),
                    alpha: round_sig6(r.alpha),
                    t1: r.t1,
                    outcome: r
                        .outcome
                        .as_ref()
                        .map(|m| CellMetrics {
                            flicker_index: round_sig6(m.flicker_index),
                            psnr_to_target: round_sig6(m.psnr_to_target),
                            low_band_similarity: round_sig6(m.low_band_similarity),
                        })
                        .map_err(Clone::clone),
                })
                .collect(),
        }
    }
}

/// Runs every grid cell on a synthetic video.
///
/// Inversion and reconstruction are shared by all cells; a failing cell is
/// recorded and the sweep continues. Flicker uses the ground-truth motion and
/// PSNR the target's dynamic range.
pub fn sweep(grid: &SweepGrid, base: &PipelineConfig, spec: &SyntheticSpec) -> Result<SweepTable> {
    grid.validate()?;
    let data = synth_video(spec)?;
    // T₁ plays no part before generation; only the grid's values are checked per cell.
    let prepared = prepare(&data.video, &data.tar, &PipelineConfig { t1: 0, ..base.clone() }, None)?;
    let (lo, hi) = data.video.min_max();
    let peak = if hi > lo { (hi - lo) as f64 } else { 1.0 };
    let rows = grid
        .cells()
        .into_iter()
        .map(|(rho, alpha, t1)| {
            let cfg = PipelineConfig {
                rho,
                alpha,
                t1,
                ..base.clone()
            };
            let outcome = (|| -> Result<CellMetrics> {
                let (out, _) = generate(&prepared, &data.src, &cfg)?;
                Ok(CellMetrics {
                    flicker_index: flicker_index(&out, &data.flow)?,
                    psnr_to_target: psnr(&out, &data.video, peak)?,
                    low_band_similarity: low_band_similarity(&out, &data.src.mu, rho)?,
                })
            })()
            .map_err(|e| e.to_string());
            SweepRow {
                rho,
                alpha,
                t1,
                outcome,
            }
        })
        .collect();
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserSpec;
    use proptest::prelude::*;

    fn tiny() -> (PipelineConfig, SyntheticSpec) {
        let cfg = PipelineConfig {
            steps: 6,
            t1: 2,
            window: 3,
            denoiser: DenoiserSpec {
                dim: 4,
                ..Default::default()
            },
            ..Default::default()
        };
        let spec = SyntheticSpec {
            frames: 3,
            channels: 2,
            height: 8,
            width: 8,
            ..Default::default()
        };
        (cfg, spec)
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(4.875512345), "4.87551");
        assert_eq!(format_sig6(0.0198431234), "0.0198431");
        assert_eq!(format_sig6(99.0), "99");
        assert_eq!(format_sig6(-1.5), "-1.5");
        assert_eq!(format_sig6(1.23456789e-7), "1.23457e-7");
        assert_eq!(format_sig6(12345678.0), "1.23457e7");
    }

    #[test]
    fn cardinality_and_order() {
        let grid = SweepGrid {
            rho: vec![0.2, 0.5, 0.8],
            alpha: vec![0.6, 0.8, 1.0],
            t1: vec![1, 2],
        };
        let cells = grid.cells();
        assert_eq!(cells.len(), 18);
        assert_eq!(cells[0], (0.2, 0.6, 1));
        assert_eq!(cells[1], (0.2, 0.6, 2));
        assert_eq!(cells[2], (0.2, 0.8, 1));
        assert_eq!(cells[17], (0.8, 1.0, 2));
        assert!(SweepGrid { rho: vec![], ..grid }.validate().is_err());
    }

    #[test]
    fn single_cell_matches_direct_run() {
        let (cfg, spec) = tiny();
        let grid = SweepGrid {
            rho: vec![cfg.rho],
            alpha: vec![cfg.alpha],
            t1: vec![cfg.t1],
        };
        let table = sweep(&grid, &cfg, &spec).unwrap();
        assert_eq!(table.rows.len(), 1);
        let data = synth_video(&spec).unwrap();
        let direct = crate::pipeline::swap_video(&data.video, &data.src, &data.tar, &cfg).unwrap();
        let m = table.rows[0].outcome.clone().unwrap();
        assert_eq!(m.psnr_to_target, direct.metrics.psnr_to_target);
        assert_eq!(m.low_band_similarity, direct.metrics.low_band_similarity);
        assert_eq!(m.flicker_index, flicker_index(&direct.output, &data.flow).unwrap());
    }

    #[test]
    fn failing_cells_are_recorded() {
        let (cfg, spec) = tiny();
        let grid = SweepGrid {
            rho: vec![0.8],
            alpha: vec![0.8],
            t1: vec![2, 99],
        };
        let table = sweep(&grid, &cfg, &spec).unwrap();
        assert!(table.rows[0].outcome.is_ok());
        assert!(table.rows[1].outcome.as_ref().unwrap_err().contains("t1 = 99"));
        let csv = table.to_csv().unwrap();
        assert!(csv.lines().nth(2).unwrap().contains(",failed,"));
    }

    #[test]
    fn permuted_grid_permutes_rows() {
        let (cfg, spec) = tiny();
        let a = sweep(
            &SweepGrid {
                rho: vec![0.0, 1.0],
                alpha: vec![0.8],
                t1: vec![2],
            },
            &cfg,
            &spec,
        )
        .unwrap();
        let b = sweep(
            &SweepGrid {
                rho: vec![1.0, 0.0],
                alpha: vec![0.8],
                t1: vec![2],
            },
            &cfg,
            &spec,
        )
        .unwrap();
        assert_eq!(a.rows[0], b.rows[1]);
        assert_eq!(a.rows[1], b.rows[0]);
    }

    fn metric() -> impl Strategy<Value = f64> {
        prop_oneof![Just(0.0), -1e3f64..1e3, 1e-9f64..1e-3, 1e5f64..1e9]
    }

    proptest! {
        #[test]
        fn csv_roundtrip(
            rows in proptest::collection::vec(
                (0.0f64..=1.0, 0.0f64..=1.0, 0usize..60, metric(), metric(), metric(), any::<bool>()),
                0..8,
            )
        ) {
            let table = SweepTable {
                rows: rows
                    .into_iter()
                    .map(|(rho, alpha, t1, f, p, l, ok)| SweepRow {
                        rho,
                        alpha,
                        t1,
                        outcome: if ok {
                            Ok(CellMetrics { flicker_index: f, psnr_to_target: p, low_band_similarity: l })
                        } else {
                            Err("window 0 (frames 0..=2): boom, \"quoted\"".into())
                        },
                    })
                    .collect(),
            };
            let csv = table.to_csv().unwrap();
            let back = SweepTable::read_csv(csv.as_bytes()).unwrap();
            prop_assert_eq!(&back, &table.rounded());
            prop_assert_eq!(back.to_csv().unwrap(), csv);
        }
    }
}
