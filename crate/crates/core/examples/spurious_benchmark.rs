//! Runs traditional, CYBORG and inverted-saliency training on the synthetic
//! shortcut benchmark and prints mean test AUC and CAM/ground-truth L1.
//!
//! Usage: `spurious_benchmark [key=value ...]`.
//!
//! Data keys: `size`, `seed`, `train` (per class), `contrast`, `noise`, `bg`,
//! and `valtest=1` to select on the test split.
//! Training keys: `epochs`, `lr`, `batch`, `runs`, `train_seed`, `channels`
//! (comma-separated widths), and `verbose=1` to print per-epoch curves.

use std::collections::HashMap;
use std::time::Instant;

use cyborg::ablations::{SaliencySubstitute, SubstitutePlan};
use cyborg::datasets::{generate_spurious_dataset, SpuriousConfig};
use cyborg::evaluation::{cam_human_agreement, mean_std};
use cyborg::loss::{CamClass, CyborgTerm, MeasureKind};
use cyborg::model::{ToyCnn, TOY_CHANNELS};
use cyborg::training::{train_repeated, TrainConfig};

fn main() -> cyborg::Result<()> {
    let args: HashMap<String, String> = std::env::args()
        .skip(1)
        .filter_map(|a| {
            a.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
        })
        .collect();
    let get = |k: &str, d: f64| args.get(k).map_or(d, |v| v.parse().expect("numeric value"));

    let size = get("size", 64.0) as usize;
    let mut data = SpuriousConfig::new(size, get("seed", 0.0) as u64);
    data.per_class.train = get("train", 100.0) as usize;
    data.texture_contrast = get("contrast", data.texture_contrast);
    data.noise = get("noise", data.noise);
    data.background_contrast = get("bg", data.background_contrast);
    let mut ds = generate_spurious_dataset(&data)?;
    if get("valtest", 0.0) > 0.0 {
        ds.val = ds.test.clone();
    }

    let desk = TrainConfig::desk_scale();
    let base = TrainConfig {
        lr: get("lr", desk.lr),
        max_epochs: get("epochs", desk.max_epochs as f64) as usize,
        batch_size: get("batch", 20.0) as usize,
        runs: get("runs", 5.0) as usize,
        ..TrainConfig::default()
    };
    let arms = [
        (
            "traditional",
            CyborgTerm::traditional(),
            SaliencySubstitute::Human,
        ),
        (
            "cyborg_gen",
            CyborgTerm::new(0.75, MeasureKind::Ssim)?,
            SaliencySubstitute::Human,
        ),
        (
            "inverted",
            CyborgTerm::new(0.75, MeasureKind::Ssim)?,
            SaliencySubstitute::Inverted,
        ),
    ];
    for (name, term, source) in arms {
        let t = Instant::now();
        let cfg = TrainConfig {
            term,
            saliency: SubstitutePlan::new(source),
            seed: get("train_seed", 0.0) as u64,
            ..base.clone()
        };
        let widths: Vec<usize> = args.get("channels").map_or(TOY_CHANNELS.to_vec(), |v| {
            v.split(',')
                .map(|w| w.parse().expect("channel width"))
                .collect()
        });
        let rep = train_repeated(&cfg, &ds, |s| ToyCnn::with_channels(s, size, 2, &widths))?;
        let l1: Vec<f64> = rep
            .runs
            .iter()
            .map(|r| {
                cam_human_agreement(&r.best_model, &ds.test, CamClass::TrueLabel)
                    .map(|m| m[&MeasureKind::L1])
            })
            .collect::<cyborg::Result<_>>()?;
        if get("verbose", 0.0) > 0.0 {
            for r in &rep.runs {
                for c in &r.result.curves {
                    println!(
                        "  seed {} ep {:2} loss {:.4} tr {:.3} va {:.3} vauc {:.3}",
                        r.result.seed, c.epoch, c.train_loss, c.train_acc, c.val_acc, c.val_auc
                    );
                }
            }
        }
        let epochs: Vec<usize> = rep.runs.iter().map(|r| r.result.best_epoch).collect();
        let aucs: Vec<String> = rep
            .runs
            .iter()
            .map(|r| format!("{:.3}", r.result.test_auc.unwrap_or(f64::NAN)))
            .collect();
        println!(
            "{name:12} auc {:.4} ± {:.4}  cam_l1 {:.4}  best_epochs {epochs:?} aucs {aucs:?}  ({:.1}s)",
            rep.summary.mean_auc,
            rep.summary.std_auc,
            mean_std(&l1).0,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
