//! Parameter and multiply-accumulate accounting.

use serde::{Deserialize, Serialize};

use super::model::{Discriminator, ThgModel};
use super::sync_expert::SyncExpert;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub component: String,
    pub parameters: usize,
    pub macs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub rows: Vec<ComplexityRow>,
    pub total_parameters: usize,
    pub total_macs: usize,
}

impl ComplexityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,parameters,macs\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.component, r.parameters, r.macs));
        }
        out.push_str(&format!("total,{},{}\n", self.total_parameters, self.total_macs));
        out
    }

    pub fn write(&self, csv_path: &std::path::Path, json_path: &std::path::Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        std::fs::write(
            json_path,
            serde_json::to_string_pretty(self).expect("report serializes"),
        )
        .map_err(|e| Error::io(json_path, e))
    }
}

/// Exact parameter count plus a MAC estimate for one `generate_n` call at the
/// model's configured window length; discriminator and expert are reported
/// alongside for context.
pub fn count_complexity(
    model: &ThgModel,
    discriminator: Option<&Discriminator>,
    expert: Option<&SyncExpert>,
) -> ComplexityReport {
    let mut rows: Vec<ComplexityRow> = model
        .component_complexity()
        .into_iter()
        .map(|(component, parameters, macs)| ComplexityRow {
            component,
            parameters,
            macs,
        })
        .collect();
    let gen_params: usize = rows.iter().map(|r| r.parameters).sum();
    let gen_macs: usize = rows.iter().map(|r| r.macs).sum();
    rows.insert(
        0,
        ComplexityRow {
            component: "generator_total".to_string(),
            parameters: gen_params,
            macs: gen_macs,
        },
    );
    if let Some(d) = discriminator {
        rows.push(ComplexityRow {
            component: "discriminator".to_string(),
            parameters: d.param_count(),
            macs: 0,
        });
    }
    if let Some(e) = expert {
        rows.push(ComplexityRow {
            component: "sync_expert".to_string(),
            parameters: e.param_count(),
            macs: 0,
        });
    }
    let total_parameters = rows
        .iter()
        .filter(|r| r.component != "generator_total")
        .map(|r| r.parameters)
        .sum::<usize>();
    ComplexityReport {
        rows,
        total_parameters,
        total_macs: gen_macs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use crate::thg::model::ThgConfig;

    #[test]
    fn dense_10_to_10_has_110_parameters() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let d = Dense::new(&mut rng, 10, 10);
        assert_eq!(d.param_count(), 110);
    }

    #[test]
    fn parameter_count_is_seed_invariant() {
        let a = ThgModel::new(ThgConfig {
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        let b = ThgModel::new(ThgConfig {
            seed: 999,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(a.param_count(), b.param_count());
    }

    #[test]
    fn doubling_width_scales_parameters_as_the_layer_formula_predicts() {
        let base = ThgModel::new(ThgConfig {
            width: 8,
            ..Default::default()
        })
        .unwrap();
        let wide = ThgModel::new(ThgConfig {
            width: 16,
            ..Default::default()
        })
        .unwrap();

        // Independent prediction from the layer dimension formulas.
        let count = |w: usize| {
            let mel_dim = 80 * 4;
            let conv = |ic: usize, oc: usize| ic * oc * 9 + oc;
            let dense = |di: usize, dd: usize| di * dd + dd;
            conv(1, w)
                + conv(w, 2 * w)
                + conv(2 * w, 4 * w)
                + dense(mel_dim, 4 * w)
                + dense(4 * w, 2 * w)
                + dense(3, w)
                + dense(w, w)
                + conv(7 * w, 4 * w)
                + conv(4 * w, 2 * w)
                + conv(2 * w, w)
                + conv(w, w / 2)
                + conv(w / 2, 1)
        };
        assert_eq!(base.param_count(), count(8));
        assert_eq!(wide.param_count(), count(16));
        let predicted = count(16) as f64 / count(8) as f64;
        let measured = wide.param_count() as f64 / base.param_count() as f64;
        assert!((predicted - measured).abs() < 1e-12);
    }

    #[test]
    fn report_totals_are_consistent() {
        let model = ThgModel::new(ThgConfig::default()).unwrap();
        let report = count_complexity(&model, None, None);
        let gen_row = &report.rows[0];
        assert_eq!(gen_row.parameters, model.param_count());
        assert_eq!(report.total_parameters, model.param_count());
        assert!(model.param_count() < 1_000_000);
        assert!(report.total_macs > 0);
    }
}
