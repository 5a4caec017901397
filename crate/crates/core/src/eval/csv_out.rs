use super::probe::ProbeResult;
use crate::contrastive::EpochRecord;
use super::sweep::{SweepAxis, SweepTable};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Usage(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Usage(format!("csv: {e}"))
}

/// `axis,value,mode,mean_accuracy,std_accuracy,seeds`
pub fn sweep_csv(tables: &[&SweepTable]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["axis", "value", "mode", "mean_accuracy", "std_accuracy", "seeds"])
        .map_err(csv_err)?;
    for t in tables {
        let axis = match t.axis {
            SweepAxis::QueueSize => "K",
            SweepAxis::LabelFraction => "label_fraction",
        };
        for r in &t.rows {
            w.write_record([
                axis.to_string(),
                r.value.to_string(),
                t.mode.as_str().to_string(),
                r.mean_accuracy.to_string(),
                r.std_accuracy.to_string(),
                r.seeds.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

/// One row per run:
/// `mode,label_fraction,seed,n_labels,test_accuracy,final_test_loss,best_epoch,best_accuracy`
pub fn probe_results_csv(runs: &[ProbeResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "mode",
        "label_fraction",
        "seed",
        "n_labels",
        "test_accuracy",
        "final_test_loss",
        "best_epoch",
        "best_accuracy",
    ])
    .map_err(csv_err)?;
    for r in runs {
        w.write_record([
            r.mode.as_str().to_string(),
            r.label_fraction.to_string(),
            r.seed.to_string(),
            r.n_labels.to_string(),
            r.test_accuracy.to_string(),
            r.test_loss_curve.last().map_or(f64::NAN, |c| c.1).to_string(),
            r.best_epoch.to_string(),
            r.best_accuracy.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

/// `mode,label_fraction,seed,epoch,test_loss`
pub fn loss_curves_csv(runs: &[ProbeResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mode", "label_fraction", "seed", "epoch", "test_loss"])
        .map_err(csv_err)?;
    for r in runs {
        for (e, l) in &r.test_loss_curve {
            w.write_record([
                r.mode.as_str().to_string(),
                r.label_fraction.to_string(),
                r.seed.to_string(),
                e.to_string(),
                l.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

/// `epoch,lr,mean_loss,uniform_loss`
pub fn pretrain_history_csv(history: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "lr", "mean_loss", "uniform_loss"]).map_err(csv_err)?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            h.lr.to_string(),
            h.mean_loss.to_string(),
            h.uniform_loss.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

/// `x,y,class`
pub fn projection_csv(coords: &Tensor, labels: &[usize]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "class"]).map_err(csv_err)?;
    for (r, y) in coords.data().chunks(2).zip(labels) {
        w.write_record([r[0].to_string(), r[1].to_string(), y.to_string()])
            .map_err(csv_err)?;
    }
    finish(w)
}
