//! Flat `key = value` configuration files.
//!
//! Lines starting with `#` are comments. Every key is optional (defaults
//! apply) but unknown keys are rejected, so typos fail loudly instead of
//! silently training with defaults.

use std::collections::HashMap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scorer::EncoderConfig;
use crate::trainer::TrainConfig;

/// Parsed `key = value` pairs with consume-and-reject-leftovers semantics.
pub struct KvReader {
    entries: HashMap<String, String>,
}

impl KvReader {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!("duplicate key '{key}'")));
            }
        }
        Ok(KvReader { entries })
    }

    /// Remove and return a raw value.
    pub fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    /// Remove and parse a value, if present.
    pub fn take_parse<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value '{raw}' for key '{key}'"))),
        }
    }

    /// Error if any keys were never consumed.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            let mut unknown: Vec<String> = self.entries.into_keys().collect();
            unknown.sort();
            Err(Error::Config(format!(
                "unknown keys: {}",
                unknown.join(", ")
            )))
        }
    }
}

/// Encoder and optimization settings bundled into one training config file.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainSettings {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

/// Apply any recognized encoder/optimizer keys from `reader` onto `s`,
/// leaving unrecognized keys in place for the caller to handle.
pub fn apply_train_settings(reader: &mut KvReader, s: &mut TrainSettings) -> Result<()> {
    if let Some(v) = reader.take_parse("u")? {
        s.encoder.u = v;
    }
    if let Some(v) = reader.take_parse("d")? {
        s.encoder.d = v;
    }
    if let Some(v) = reader.take_parse("ff_hidden")? {
        s.encoder.ff_hidden = v;
    }
    if let Some(v) = reader.take_parse("n_layers")? {
        s.encoder.n_layers = v;
    }
    if let Some(v) = reader.take_parse("n_heads")? {
        s.encoder.n_heads = v;
    }
    if let Some(v) = reader.take_parse("dropout")? {
        s.encoder.dropout = v;
    }
    if let Some(v) = reader.take_parse("encoder_seed")? {
        s.encoder.seed = v;
    }
    if let Some(v) = reader.take_parse("batch_size")? {
        s.train.batch_size = v;
    }
    if let Some(v) = reader.take_parse("learning_rate")? {
        s.train.learning_rate = v;
    }
    if let Some(v) = reader.take_parse("weight_decay")? {
        s.train.weight_decay = v;
    }
    if let Some(v) = reader.take_parse("target_avg_loss")? {
        s.train.target_avg_loss = v;
    }
    if let Some(v) = reader.take_parse("max_epochs")? {
        s.train.max_epochs = v;
    }
    if let Some(v) = reader.take_parse("train_seed")? {
        s.train.seed = v;
    }
    Ok(())
}

/// Parse a training config file. Omitted keys keep their defaults; unknown
/// keys are an error.
pub fn parse_train_settings(text: &str) -> Result<TrainSettings> {
    let mut reader = KvReader::from_text(text)?;
    let mut settings = TrainSettings::default();
    apply_train_settings(&mut reader, &mut settings)?;
    reader.finish()?;
    settings.encoder.validate()?;
    settings.train.validate()?;
    Ok(settings)
}

/// Render settings in the same `key = value` format [`parse_train_settings`]
/// reads.
pub fn render_train_settings(s: &TrainSettings) -> String {
    format!(
        "u = {}\nd = {}\nff_hidden = {}\nn_layers = {}\nn_heads = {}\ndropout = {}\nencoder_seed = {}\n\
         batch_size = {}\nlearning_rate = {}\nweight_decay = {}\ntarget_avg_loss = {}\nmax_epochs = {}\ntrain_seed = {}\n",
        s.encoder.u,
        s.encoder.d,
        s.encoder.ff_hidden,
        s.encoder.n_layers,
        s.encoder.n_heads,
        s.encoder.dropout,
        s.encoder.seed,
        s.train.batch_size,
        s.train.learning_rate,
        s.train.weight_decay,
        s.train.target_avg_loss,
        s.train.max_epochs,
        s.train.seed,
    )
}
