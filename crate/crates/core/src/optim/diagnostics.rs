use std::io::Write;

use super::{AuxStep, StepDiagnostics};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsRow {
    pub epoch: usize,
    pub step: usize,
    pub aux: AuxStep,
}

/// Append-only record of every auxiliary gradient's treatment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiagnosticsLog {
    pub rows: Vec<DiagnosticsRow>,
}

impl DiagnosticsLog {
    pub fn record(&mut self, epoch: usize, step: usize, diag: &StepDiagnostics) {
        for a in &diag.auxiliaries {
            self.rows.push(DiagnosticsRow {
                epoch,
                step,
                aux: a.clone(),
            });
        }
    }

    /// Fraction of conflicting auxiliary gradients per epoch, ascending by
    /// epoch. Epochs without auxiliaries are omitted.
    pub fn conflict_proportions(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, usize, usize)> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some((e, total, hits)) if *e == r.epoch => {
                    *total += 1;
                    *hits += r.aux.conflict as usize;
                }
                _ => out.push((r.epoch, 1, r.aux.conflict as usize)),
            }
        }
        out.into_iter()
            .map(|(e, total, hits)| (e, hits as f64 / total as f64))
            .collect()
    }

    /// `epoch,step,aux_name,conflict,pre_norm,post_norm,projected`.
    pub fn write_steps_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "epoch,step,aux_name,conflict,pre_norm,post_norm,projected")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.step,
                r.aux.name,
                r.aux.conflict as u8,
                r.aux.pre_norm,
                r.aux.post_norm,
                r.aux.projected as u8
            )?;
        }
        Ok(())
    }

    /// `epoch,conflict_proportion`.
    pub fn write_epochs_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "epoch,conflict_proportion")?;
        for (e, p) in self.conflict_proportions() {
            writeln!(out, "{e},{p}")?;
        }
        Ok(())
    }
}
