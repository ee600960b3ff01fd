//! Ablation harness: trains the five module combinations over a seed list
//! and reports target mIoU / mean F1 per variant.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{FusionVariant, RunConfig};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::trainer::train;

/// The five ablation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Base,
    DdfCnn,
    DdfEfficient,
    Prw,
    DdfPrw,
}

/// Row order of the report.
pub const VARIANTS: [Variant; 5] =
    [Variant::Base, Variant::DdfCnn, Variant::DdfEfficient, Variant::Prw, Variant::DdfPrw];

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Base => "Base",
            Variant::DdfCnn => "Base+DDF(CNN)",
            Variant::DdfEfficient => "Base+DDF(Efficient)",
            Variant::Prw => "Base+PRW",
            Variant::DdfPrw => "Base+DDF+PRW",
        }
    }

    fn dir_name(&self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::DdfCnn => "ddf_cnn",
            Variant::DdfEfficient => "ddf_efficient",
            Variant::Prw => "prw",
            Variant::DdfPrw => "ddf_prw",
        }
    }

    /// Applies this variant's module toggles to a copy of the base config.
    /// The combined row uses efficient fusion, matching the full pipeline.
    pub fn apply(&self, base: &RunConfig, seed: u64, out_dir: &Path) -> RunConfig {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.out_dir = out_dir.join(self.dir_name()).join(format!("seed{seed}"));
        cfg.prw.enabled = matches!(self, Variant::Prw | Variant::DdfPrw);
        cfg.fusion.variant = match self {
            Variant::Base | Variant::Prw => FusionVariant::None,
            Variant::DdfCnn => FusionVariant::Cnn,
            Variant::DdfEfficient | Variant::DdfPrw => FusionVariant::Efficient,
        };
        cfg
    }
}

/// Harness input: the shared base config, the training seeds (at least
/// three), and where the twin reports land.
#[derive(Debug, Clone)]
pub struct AblationSpec {
    pub base: RunConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

/// Per-variant scores over the seed list.
#[derive(Debug, Clone)]
pub struct VariantResult {
    pub variant: Variant,
    pub miou: Vec<f64>,
    pub mf1: Vec<f64>,
}

impl VariantResult {
    pub fn miou_mean(&self) -> f64 {
        mean(&self.miou)
    }

    pub fn miou_std(&self) -> f64 {
        stdev(&self.miou)
    }

    pub fn mf1_mean(&self) -> f64 {
        mean(&self.mf1)
    }

    pub fn mf1_std(&self) -> f64 {
        stdev(&self.mf1)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation over seeds.
fn stdev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// All five rows plus the seed list they were computed over.
#[derive(Debug, Clone)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<VariantResult>,
}

impl AblationReport {
    pub fn row(&self, variant: Variant) -> &VariantResult {
        self.rows.iter().find(|r| r.variant == variant).expect("all variants present")
    }

    /// mIoU table: one row per variant, one column per seed plus mean and
    /// standard deviation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant");
        for s in &self.seeds {
            write!(out, ",miou_seed{s}").unwrap();
        }
        out.push_str(",miou_mean,miou_std\n");
        for r in &self.rows {
            write!(out, "{}", r.variant.name()).unwrap();
            for v in &r.miou {
                write!(out, ",{v:.6}").unwrap();
            }
            writeln!(out, ",{:.6},{:.6}", r.miou_mean(), r.miou_std()).unwrap();
        }
        out
    }

    /// Same table for mean F1.
    pub fn to_f1_csv(&self) -> String {
        let mut out = String::from("variant");
        for s in &self.seeds {
            write!(out, ",mf1_seed{s}").unwrap();
        }
        out.push_str(",mf1_mean,mf1_std\n");
        for r in &self.rows {
            write!(out, "{}", r.variant.name()).unwrap();
            for v in &r.mf1 {
                write!(out, ",{v:.6}").unwrap();
            }
            writeln!(out, ",{:.6},{:.6}", r.mf1_mean(), r.mf1_std()).unwrap();
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Ablation report\n\n## Target mIoU\n\n| variant |");
        for s in &self.seeds {
            write!(out, " seed {s} |").unwrap();
        }
        out.push_str(" mean ± std |\n|---|");
        for _ in &self.seeds {
            out.push_str("---|");
        }
        out.push_str("---|\n");
        for r in &self.rows {
            write!(out, "| {} |", r.variant.name()).unwrap();
            for v in &r.miou {
                write!(out, " {v:.4} |").unwrap();
            }
            writeln!(out, " {:.4} ± {:.4} |", r.miou_mean(), r.miou_std()).unwrap();
        }
        out.push_str("\n## Target mean F1\n\n| variant |");
        for s in &self.seeds {
            write!(out, " seed {s} |").unwrap();
        }
        out.push_str(" mean ± std |\n|---|");
        for _ in &self.seeds {
            out.push_str("---|");
        }
        out.push_str("---|\n");
        for r in &self.rows {
            write!(out, "| {} |", r.variant.name()).unwrap();
            for v in &r.mf1 {
                write!(out, " {v:.4} |").unwrap();
            }
            writeln!(out, " {:.4} ± {:.4} |", r.mf1_mean(), r.mf1_std()).unwrap();
        }
        out
    }

    /// Writes `report.csv`, `report_f1.csv`, and `report.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        for (name, text) in [
            ("report.csv", self.to_csv()),
            ("report_f1.csv", self.to_f1_csv()),
            ("report.md", self.to_markdown()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }
}

/// Trains every variant x seed combination and writes the twin reports into
/// `spec.out_dir`.
pub fn run_ablation<R: Real>(spec: &AblationSpec) -> Result<AblationReport> {
    if spec.seeds.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "ablation needs at least 3 seeds, got {}",
            spec.seeds.len()
        )));
    }
    spec.base.validate()?;
    let mut rows = Vec::with_capacity(VARIANTS.len());
    for variant in VARIANTS {
        let mut miou = Vec::with_capacity(spec.seeds.len());
        let mut mf1 = Vec::with_capacity(spec.seeds.len());
        for &seed in &spec.seeds {
            let cfg = variant.apply(&spec.base, seed, &spec.out_dir);
            let outcome = train::<R>(&cfg)?;
            miou.push(outcome.final_report.miou);
            mf1.push(outcome.final_report.mf1);
        }
        rows.push(VariantResult { variant, miou, mf1 });
    }
    let report = AblationReport { seeds: spec.seeds.clone(), rows };
    report.write(&spec.out_dir)?;
    Ok(report)
}
