//! Text formats for predictions, curves and attention histograms.

use std::io::Write;

use super::attention::LevelDiagnostics;
use super::ranking::{CurvePoint, PredictionRecord};
use crate::data::NA_ID;
use crate::{Error, Result};

/// `bag_key \t gold_ids \t relation_id:score,...` over non-NA relations.
pub fn write_predictions(out: &mut (impl Write + ?Sized), preds: &[PredictionRecord]) -> std::io::Result<()> {
    for p in preds {
        let gold: Vec<String> = p.gold.iter().map(usize::to_string).collect();
        let scores: Vec<String> = (1..p.scores.len()).map(|r| format!("{r}:{:e}", p.scores[r])).collect();
        writeln!(out, "{}\t{}\t{}", p.key, gold.join(","), scores.join(","))?;
    }
    Ok(())
}

/// Inverse of [`write_predictions`]; labels and attention are not stored.
pub fn read_predictions(text: &str) -> Result<Vec<PredictionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = || Error::input(format!("prediction line {}: malformed {line:?}", i + 1));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(bad());
            }
            let gold: Vec<usize> = f[1].split(',').map(|g| g.parse().map_err(|_| bad())).collect::<Result<_>>()?;
            let mut scores = vec![0.0];
            for (j, pair) in f[2].split(',').enumerate() {
                let (r, s) = pair.split_once(':').ok_or_else(bad)?;
                if r.parse::<usize>().map_err(|_| bad())? != j + 1 {
                    return Err(bad());
                }
                scores.push(s.parse().map_err(|_| bad())?);
            }
            Ok(PredictionRecord {
                key: f[0].to_string(),
                labels: vec![gold.iter().copied().find(|&g| g != NA_ID).unwrap_or(NA_ID)],
                gold,
                scores,
                alphas: None,
            })
        })
        .collect()
}

/// `recall \t precision`, one point per line.
pub fn write_curve(out: &mut (impl Write + ?Sized), curve: &[CurvePoint]) -> std::io::Result<()> {
    writeln!(out, "recall\tprecision")?;
    for c in curve {
        writeln!(out, "{}\t{}", c.recall, c.precision)?;
    }
    Ok(())
}

/// `level \t bin_lo \t bin_hi \t count \t accuracy`.
pub fn write_histogram(out: &mut (impl Write + ?Sized), levels: &[LevelDiagnostics]) -> std::io::Result<()> {
    writeln!(out, "level\tbin_lo\tbin_hi\tcount\taccuracy")?;
    for d in levels {
        for b in &d.bins {
            writeln!(out, "{}\t{}\t{}\t{}\t{}", d.level, b.lo, b.hi, b.count, b.accuracy())?;
        }
    }
    Ok(())
}
