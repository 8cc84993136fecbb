//! Experiment configuration: one JSON document with named presets.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datagen::DEFAULT_BLOCK_SCALES;
use crate::dynamics::Morphology;
use crate::error::{Error, Result};
use crate::evalharness::SweepOptions;
use crate::expert::{CostWeights, MpcOptions, OrbitOptions, N_ERR};
use crate::imitation::{DartScale, IlConfig};
use crate::io::hash_json;
use crate::policy::NetArch;
use crate::wingkin::{default_reference, WingPair, U_LEN};

/// Network width and training-set size for one algorithm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgoSettings {
    pub n_hidden: usize,
    /// Total pairs including the zero pairs.
    pub n_data: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgoTable {
    pub bc: AlgoSettings,
    pub dagger: AlgoSettings,
    pub dart: AlgoSettings,
    pub coil: AlgoSettings,
}

impl AlgoTable {
    pub fn get(&self, algo: &str) -> Result<AlgoSettings> {
        match algo {
            "bc" => Ok(self.bc),
            "dagger" => Ok(self.dagger),
            "dart" => Ok(self.dart),
            "coil" => Ok(self.coil),
            _ => Err(Error::Invalid(format!("unknown algorithm {algo}"))),
        }
    }

    pub fn max_data(&self) -> usize {
        [self.bc, self.dagger, self.dart, self.coil].iter().map(|a| a.n_data).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: String,
    pub morphology: Morphology,
    /// Waveform the orbit search starts from.
    pub reference_seed: WingPair,
    pub orbit: OrbitOptions,
    pub weights: CostWeights,
    pub mpc: MpcOptions,
    /// Zero pairs appended to every dataset.
    pub n_zero: usize,
    pub block_scales: [f64; 4],
    pub data_seed: u64,
    pub algorithms: AlgoTable,
    pub il: IlConfig,
    pub sweep: SweepOptions,
    pub noise_sigma: f64,
    pub bench_periods: usize,
    pub bench_steps_per_period: usize,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Small enough for a workstation: 240 pairs, 256 sweep trajectories.
    pub fn desk() -> Self {
        let s = AlgoSettings { n_hidden: 36, n_data: 240 };
        Self {
            preset: "desk".into(),
            morphology: Morphology::default(),
            reference_seed: WingPair::symmetric(default_reference()),
            orbit: OrbitOptions::default(),
            weights: CostWeights::default(),
            mpc: MpcOptions::default(),
            n_zero: 40,
            block_scales: DEFAULT_BLOCK_SCALES,
            data_seed: 11,
            algorithms: AlgoTable { bc: s, dagger: s, dart: s, coil: s },
            il: IlConfig { rollouts_per_iter: 8, ..IlConfig::default() },
            sweep: SweepOptions::default(),
            noise_sigma: 1e-3,
            bench_periods: 10,
            bench_steps_per_period: 500,
            output_dir: PathBuf::from("out"),
        }
    }

    /// Full-size experiment.
    pub fn paper() -> Self {
        let base = Self::desk();
        Self {
            preset: "paper".into(),
            n_zero: 300,
            algorithms: AlgoTable {
                bc: AlgoSettings { n_hidden: 36, n_data: 1587 },
                dagger: AlgoSettings { n_hidden: 60, n_data: 3049 },
                dart: AlgoSettings { n_hidden: 36, n_data: 2012 },
                coil: AlgoSettings { n_hidden: 36, n_data: 1587 },
            },
            il: IlConfig { n_iter: 5, alpha: 0.75, dart_scale: DartScale::Factor(1e-4), ..IlConfig::default() },
            sweep: SweepOptions { n_traj: 12291, ..base.sweep.clone() },
            ..base
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            _ => Err(Error::Invalid(format!("unknown preset {name} (expected desk or paper)"))),
        }
    }

    pub fn arch(&self, algo: &str) -> Result<NetArch> {
        Ok(NetArch::new(N_ERR, self.algorithms.get(algo)?.n_hidden, U_LEN))
    }

    pub fn validate(&self) -> Result<()> {
        self.morphology.validate()?;
        self.reference_seed.validate()?;
        self.weights.validate()?;
        self.il.validate()?;
        if self.algorithms.max_data() <= self.n_zero {
            return Err(Error::Invalid("datasets must be larger than the zero-pair count".into()));
        }
        if self.sweep.n_traj == 0 || self.sweep.horizon < crate::evalharness::MIN_SERIES {
            return Err(Error::Invalid("sweep needs trajectories and at least 10 periods".into()));
        }
        Ok(())
    }

    /// Hash of everything except the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hash_json(&c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_differ() {
        let d = ExperimentConfig::desk();
        let p = ExperimentConfig::paper();
        d.validate().unwrap();
        p.validate().unwrap();
        assert_ne!(d.hash(), p.hash());
        assert_eq!(p.algorithms.coil.n_data, 1587);
        assert_eq!(p.n_zero, 300);
        assert_eq!(p.il.n_iter, 5);
        assert_eq!(p.il.alpha, 0.75);
        assert_eq!(p.il.dart_scale, DartScale::Factor(1e-4));
        assert_eq!(p.sweep.n_traj, 12291);
        assert_eq!(crate::policy::param_count(&p.arch("bc").unwrap()), 3408);
        assert_eq!(crate::policy::param_count(&p.arch("dagger").unwrap()), 5160);
    }

    #[test]
    fn json_round_trip_and_hash_ignores_output_dir() {
        let d = ExperimentConfig::desk();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(back, d);
        let mut moved = d.clone();
        moved.output_dir = PathBuf::from("elsewhere");
        assert_eq!(moved.hash(), d.hash());
        assert!(ExperimentConfig::preset("huge").is_err());
    }
}
