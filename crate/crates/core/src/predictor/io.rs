//! CSV in/out for batch prediction.

use std::collections::HashMap;

use super::{ObservationWindow, PredictError, PredictedTrajectory};
use crate::dynamics::VehicleState;

/// Reads observation windows. Columns are found by name (`context`,
/// `o{k}_x`, `o{k}_y`, `o{k}_theta`, `o{k}_v`), so dataset sample files
/// work as input; other columns are ignored. A missing `context` column
/// reads as zero.
pub fn read_windows_csv<R: std::io::Read>(r: R) -> Result<Vec<ObservationWindow>, PredictError> {
    let mut rd = csv::Reader::from_reader(r);
    let hdr = rd.headers()?.clone();
    let idx: HashMap<&str, usize> = hdr.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let obs_len = (0..).take_while(|k| idx.contains_key(format!("o{k}_x").as_str())).count();
    if obs_len == 0 {
        return Err(PredictError::InvalidConfig("window CSV has no o0_x column".into()));
    }
    let mut cols = Vec::with_capacity(obs_len);
    for k in 0..obs_len {
        let mut c = [0usize; 4];
        for (slot, name) in c.iter_mut().zip(["x", "y", "theta", "v"]) {
            let key = format!("o{k}_{name}");
            *slot = *idx
                .get(key.as_str())
                .ok_or_else(|| PredictError::InvalidConfig(format!("missing column {key}")))?;
        }
        cols.push(c);
    }
    let ctx = idx.get("context").copied();
    let mut out = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| PredictError::InvalidConfig(format!("row {}: bad {}", row + 1, &hdr[i])))
        };
        let states = cols
            .iter()
            .map(|c| Ok(VehicleState::new(num(c[0])?, num(c[1])?, num(c[2])?, num(c[3])?)))
            .collect::<Result<Vec<_>, PredictError>>()?;
        let context = match ctx {
            Some(i) => num(i)?,
            None => 0.0,
        };
        out.push(ObservationWindow { states, context });
    }
    Ok(out)
}

/// Long format: one row per predicted step. `delta` and `a` are empty for
/// heads without decoded controls.
pub fn write_predictions_csv<W: std::io::Write>(w: W, preds: &[PredictedTrajectory]) -> Result<(), PredictError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["sample", "head", "step", "x", "y", "theta", "v", "delta", "a"])?;
    for (i, p) in preds.iter().enumerate() {
        for (k, s) in p.states.iter().enumerate() {
            let (d, a) = match &p.controls {
                Some(u) => (u[k].delta.to_string(), u[k].a.to_string()),
                None => (String::new(), String::new()),
            };
            wr.write_record([
                i.to_string(),
                p.source.as_str().to_string(),
                (k + 1).to_string(),
                s.x.to_string(),
                s.y.to_string(),
                s.theta.to_string(),
                s.v.to_string(),
                d,
                a,
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}
