//! On-disk checkpoints: a directory holding `manifest.txt`, one parameter
//! blob per sub-model and the per-iteration training log.

use std::fs;
use std::path::Path;

use crate::config::{TrainConfig, CONFIG_KEYS};
use crate::dual::CycleModels;
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::training::{Checkpoint, IterationRecord, LossRow};

const FORMAT: &str = "dmcw-checkpoint-1";
pub const MANIFEST: &str = "manifest.txt";
pub const TRAIN_LOG: &str = "train_log.csv";

fn blob_names(stage: usize) -> [(String, usize); 4] {
    ["g", "f", "d_x", "d_y"]
        .iter()
        .enumerate()
        .map(|(i, m)| (format!("stage{stage}_{m}.bin"), i))
        .collect::<Vec<_>>()
        .try_into()
        .expect("four models")
}

fn model_params(models: &CycleModels, i: usize) -> &ParamSet {
    match i {
        0 => models.g.params(),
        1 => models.f.params(),
        2 => models.d_x.params(),
        _ => models.d_y.params(),
    }
}

fn model_params_mut(models: &mut CycleModels, i: usize) -> &mut ParamSet {
    match i {
        0 => models.g.params_mut(),
        1 => models.f.params_mut(),
        2 => models.d_x.params_mut(),
        _ => models.d_y.params_mut(),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_row(text: &str) -> Result<LossRow> {
    let v: Vec<f64> = text
        .split(',')
        .map(|f| f.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Checkpoint(format!("bad loss row {text:?}: {e}")))?;
    if v.len() != 5 {
        return Err(Error::Checkpoint(format!(
            "loss row {text:?} needs 5 fields"
        )));
    }
    Ok(LossRow {
        critic_x: v[0],
        critic_y: v[1],
        gen: v[2],
        cycle: v[3],
        total: v[4],
    })
}

impl Checkpoint {
    fn stages(&self) -> Vec<(usize, &CycleModels)> {
        let mut out = vec![(1, &self.model.stage1)];
        if let Some(s2) = &self.model.stage2 {
            out.push((2, s2));
        }
        out
    }

    pub fn manifest(&self) -> String {
        let mut out = format!("format={FORMAT}\nepoch={}\n", self.epoch);
        for line in self.config.to_text().lines() {
            out.push_str("config.");
            out.push_str(line);
            out.push('\n');
        }
        for (i, row) in self.history.iter().enumerate() {
            out.push_str(&format!("history.{}={}\n", i + 1, row.to_csv_fields()));
        }
        out
    }

    /// Writes the checkpoint into `dir`, creating it if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&dir.join(MANIFEST), self.manifest())?;
        for (stage, models) in self.stages() {
            for (name, i) in blob_names(stage) {
                write(&dir.join(name), model_params(models, i).to_bytes())?;
            }
        }
        write(&dir.join(TRAIN_LOG), self.log_csv())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;

        let mut config = TrainConfig::default();
        let mut epoch = None;
        let mut history = Vec::new();
        let mut format_ok = false;
        let mut config_keys = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad manifest line {line:?}")))?;
            if let Some(k) = key.strip_prefix("config.") {
                config
                    .set(k, value)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                config_keys += 1;
            } else if let Some(n) = key.strip_prefix("history.") {
                if n.parse::<usize>().ok() != Some(history.len() + 1) {
                    return Err(Error::Checkpoint(format!("history out of order at {key}")));
                }
                history.push(parse_row(value)?);
            } else if key == "epoch" {
                epoch = Some(
                    value
                        .parse::<usize>()
                        .map_err(|e| Error::Checkpoint(format!("epoch: {e}")))?,
                );
            } else if key == "format" {
                format_ok = value == FORMAT;
            } else {
                return Err(Error::Checkpoint(format!("unknown manifest key {key:?}")));
            }
        }
        if !format_ok {
            return Err(Error::Checkpoint(format!(
                "{} is not a {FORMAT} manifest",
                path.display()
            )));
        }
        if config_keys != CONFIG_KEYS.len() {
            return Err(Error::Checkpoint("manifest config is incomplete".into()));
        }
        let epoch = epoch.ok_or_else(|| Error::Checkpoint("manifest lacks epoch".into()))?;

        let mut ckpt = Checkpoint::initial(&config)?;
        ckpt.epoch = epoch;
        ckpt.history = history;
        let mut stages = vec![(1, &mut ckpt.model.stage1)];
        if let Some(s2) = ckpt.model.stage2.as_mut() {
            stages.push((2, s2));
        }
        for (stage, models) in stages {
            for (name, i) in blob_names(stage) {
                let loaded = ParamSet::load(dir.join(&name))?;
                model_params_mut(models, i)
                    .assign_from(&loaded)
                    .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            }
        }
        let log_path = dir.join(TRAIN_LOG);
        if log_path.exists() {
            let text = fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
            ckpt.log = parse_log(&text, ckpt.epoch)?;
        }
        Ok(ckpt)
    }
}

fn parse_log(text: &str, epochs: usize) -> Result<Vec<IterationRecord>> {
    let mut lines = text.lines();
    lines.next();
    let mut out = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let (iter, rest) = line
            .split_once(',')
            .ok_or_else(|| Error::Checkpoint(format!("bad log line {line:?}")))?;
        let iteration: usize = iter
            .parse()
            .map_err(|e| Error::Checkpoint(format!("bad iteration {iter:?}: {e}")))?;
        out.push(IterationRecord {
            iteration,
            epoch: 0,
            losses: parse_row(rest)?,
        });
    }
    // Recover epochs from the fixed iterations-per-epoch schedule.
    let total = out.len();
    if epochs > 0 && total % epochs == 0 {
        let per = (total / epochs).max(1);
        for r in &mut out {
            r.epoch = (r.iteration - 1) / per + 1;
        }
    }
    Ok(out)
}
