use serde::{Deserialize, Serialize};
use std::fmt;

/// Keys accepted in each section. Anything else is rejected.
pub const KNOWN: &[(&str, &[&str])] = &[
    ("model", &["hamiltonian", "vf", "w_aa", "w_ab", "extra_mode", "eps", "theta_deg", "eps_list", "layer_shift"]),
    (
        "numerics",
        &[
            "lambda",
            "lambda_margin",
            "kgrid",
            "aae_order",
            "zeta_n",
            "f",
            "f_center",
            "f_half_width",
            "f_sigma",
            "kappa_h",
            "x_grid",
            "path_per_leg",
            "seed",
        ],
    ),
    ("weyl", &["window_half", "window_margin", "eps_list", "pairs", "fiber", "cutoffs", "trace_eps", "mean_zero_symbols"]),
    (
        "atomic",
        &[
            "v0",
            "sigma_x",
            "sigma_z",
            "d",
            "vint_amp",
            "vint_width",
            "gmax",
            "h_z",
            "refine",
            "nk",
            "nx",
            "energy",
            "f_center",
            "f_half_width",
            "ibp_gmax",
            "ibp_h_z",
            "ibp_nk",
            "ibp_nx",
            "route",
        ],
    ),
    ("output", &["dir", "formats"]),
];

#[derive(Debug)]
pub enum ConfigError {
    Syntax(String),
    Unknown(Vec<String>),
    Missing(&'static str),
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Syntax(m) => write!(f, "config parse error: {m}"),
            ConfigError::Unknown(keys) => write!(f, "unknown config keys: {}", keys.join(", ")),
            ConfigError::Missing(k) => write!(f, "missing required config key `{k}`"),
            ConfigError::Invalid(m) => write!(f, "invalid config: {m}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Model {
    /// `bm`, `generic` or `free`.
    pub hamiltonian: String,
    pub vf: Option<f64>,
    pub w_aa: f64,
    pub w_ab: f64,
    /// Amplitude of the symmetry-breaking fourth mode (`generic` only).
    pub extra_mode: f64,
    pub eps: Option<f64>,
    pub theta_deg: Option<f64>,
    pub eps_list: Vec<f64>,
    /// `none` or `textbook`.
    pub layer_shift: String,
}

impl Default for Model {
    fn default() -> Self {
        Model {
            hamiltonian: "bm".into(),
            vf: None,
            w_aa: 0.0,
            w_ab: 0.0,
            extra_mode: 0.0,
            eps: None,
            theta_deg: None,
            eps_list: vec![0.08, 0.04, 0.02],
            layer_shift: "none".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    pub lambda: Option<f64>,
    pub lambda_margin: f64,
    pub kgrid: usize,
    pub aae_order: usize,
    pub zeta_n: usize,
    /// `bump` or `gauss_bump`.
    pub f: String,
    pub f_center: f64,
    pub f_half_width: f64,
    pub f_sigma: f64,
    pub kappa_h: f64,
    pub x_grid: usize,
    pub path_per_leg: usize,
    pub seed: u64,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            lambda: None,
            lambda_margin: 4.0,
            kgrid: 24,
            aae_order: 8,
            zeta_n: 200,
            f: "gauss_bump".into(),
            f_center: 0.05,
            f_half_width: 1.0,
            f_sigma: 0.25,
            kappa_h: 0.03,
            x_grid: 8,
            path_per_leg: 12,
            seed: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weyl {
    pub window_half: i64,
    pub window_margin: i64,
    pub eps_list: Vec<f64>,
    pub pairs: usize,
    /// Fiber modes in units of `a1*, a2*`.
    pub fiber: Vec<[i64; 2]>,
    pub cutoffs: Vec<usize>,
    pub trace_eps: f64,
    pub mean_zero_symbols: usize,
}

impl Default for Weyl {
    fn default() -> Self {
        Weyl {
            window_half: 6,
            window_margin: 2,
            eps_list: vec![0.2, 0.1, 0.05],
            pairs: 10,
            fiber: vec![[0, 0], [4, 0], [0, 4]],
            cutoffs: vec![4, 8, 16],
            trace_eps: 0.1,
            mean_zero_symbols: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Atomic {
    pub v0: Option<f64>,
    pub sigma_x: Option<f64>,
    pub sigma_z: Option<f64>,
    pub d: Option<f64>,
    pub vint_amp: Option<f64>,
    pub vint_width: Option<f64>,
    pub gmax: f64,
    pub h_z: f64,
    pub refine: f64,
    pub nk: usize,
    pub nx: usize,
    pub energy: f64,
    pub f_center: f64,
    pub f_half_width: f64,
    pub ibp_gmax: Vec<f64>,
    pub ibp_h_z: f64,
    /// k-grid side for each entry of `ibp_gmax`.
    pub ibp_nk: Vec<usize>,
    pub ibp_nx: usize,
    /// `divided-difference` or `quadrature`.
    pub route: String,
}

impl Default for Atomic {
    fn default() -> Self {
        Atomic {
            v0: None,
            sigma_x: None,
            sigma_z: None,
            d: None,
            vint_amp: None,
            vint_width: None,
            gmax: 3.0,
            h_z: 0.5,
            refine: 1.5,
            nk: 5,
            nx: 5,
            energy: -1.925,
            f_center: -2.0,
            f_half_width: 0.8,
            ibp_gmax: vec![4.5, 6.0, 7.5],
            ibp_h_z: 0.8,
            ibp_nk: vec![8, 10, 12],
            ibp_nx: 1,
            route: "divided-difference".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Output {
    pub dir: String,
    pub formats: Vec<String>,
}

impl Default for Output {
    fn default() -> Self {
        Output { dir: "out".into(), formats: vec!["json".into(), "csv".into(), "plot".into()] }
    }
}

impl Output {
    pub fn wants(&self, fmt: &str) -> bool {
        self.formats.iter().any(|f| f == fmt)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Model,
    pub numerics: Numerics,
    pub weyl: Weyl,
    pub atomic: Atomic,
    pub output: Output,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.message().to_string()))?;
        let mut unknown = Vec::new();
        for (section, value) in &table {
            let Some((_, keys)) = KNOWN.iter().find(|(s, _)| s == section) else {
                unknown.push(section.clone());
                continue;
            };
            match value.as_table() {
                Some(t) => unknown.extend(t.keys().filter(|k| !keys.contains(&k.as_str())).map(|k| format!("{section}.{k}"))),
                None => return Err(ConfigError::Invalid(format!("`{section}` must be a section"))),
            }
        }
        if !unknown.is_empty() {
            return Err(ConfigError::Unknown(unknown));
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let vf = self.model.vf.ok_or(ConfigError::Missing("model.vf"))?;
        if !(vf > 0.0) {
            return Err(ConfigError::Invalid("model.vf must be positive".into()));
        }
        if !["bm", "generic", "free"].contains(&self.model.hamiltonian.as_str()) {
            return Err(ConfigError::Invalid(format!("model.hamiltonian `{}` is not one of bm, generic, free", self.model.hamiltonian)));
        }
        if !["none", "textbook"].contains(&self.model.layer_shift.as_str()) {
            return Err(ConfigError::Invalid(format!("model.layer_shift `{}` is not one of none, textbook", self.model.layer_shift)));
        }
        if self.model.eps.is_some() && self.model.theta_deg.is_some() {
            return Err(ConfigError::Invalid("set at most one of model.eps and model.theta_deg".into()));
        }
        if !["bump", "gauss_bump"].contains(&self.numerics.f.as_str()) {
            return Err(ConfigError::Invalid(format!("numerics.f `{}` is not one of bump, gauss_bump", self.numerics.f)));
        }
        if !["divided-difference", "quadrature"].contains(&self.atomic.route.as_str()) {
            return Err(ConfigError::Invalid(format!("atomic.route `{}` is not one of divided-difference, quadrature", self.atomic.route)));
        }
        if self.atomic.ibp_gmax.is_empty() || self.atomic.ibp_gmax.len() != self.atomic.ibp_nk.len() {
            return Err(ConfigError::Invalid("atomic.ibp_gmax and atomic.ibp_nk must be non-empty and of equal length".into()));
        }
        for f in &self.output.formats {
            if !["json", "csv", "plot"].contains(&f.as_str()) {
                return Err(ConfigError::Invalid(format!("output.formats entry `{f}` is not one of json, csv, plot")));
            }
        }
        Ok(())
    }

    pub fn vf(&self) -> f64 {
        self.model.vf.expect("validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_keys_match_the_structs() {
        let mut cfg = RunConfig::default();
        cfg.model.vf = Some(1.0);
        cfg.model.eps = Some(0.1);
        cfg.numerics.lambda = Some(1.0);
        cfg.atomic = Atomic { v0: Some(-3.0), sigma_x: Some(1.0), sigma_z: Some(1.0), d: Some(1.0), vint_amp: Some(0.1), vint_width: Some(1.0), ..Atomic::default() };
        let v = toml::Value::try_from(&cfg).unwrap();
        let table = v.as_table().unwrap();
        for (section, keys) in KNOWN {
            let t = table[*section].as_table().unwrap();
            let mut got: Vec<&str> = t.keys().map(|s| s.as_str()).collect();
            got.sort();
            let mut want: Vec<&str> = keys.to_vec();
            want.sort();
            // theta_deg cannot coexist with eps in a valid config
            want.retain(|k| *k != "theta_deg");
            assert_eq!(got, want, "section {section}");
        }
    }

    #[test]
    fn all_unknown_keys_are_listed() {
        let e = RunConfig::parse("[model]\nvf = 1.0\nvF = 2\n[numerics]\nkgird = 3\n[extra]\n").unwrap_err();
        match e {
            ConfigError::Unknown(k) => assert_eq!(k, vec!["extra", "model.vF", "numerics.kgird"]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn missing_vf_is_named() {
        let e = RunConfig::parse("[model]\nw_ab = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("model.vf"));
    }

    #[test]
    fn defaults_fill_everything_else() {
        let c = RunConfig::parse("[model]\nvf = 1.0\n").unwrap();
        assert_eq!(c.numerics.kgrid, 24);
        assert_eq!(c.weyl.fiber.len(), 3);
        assert!(c.output.wants("csv"));
    }

    #[test]
    fn conflicting_twist_is_rejected() {
        assert!(matches!(RunConfig::parse("[model]\nvf = 1.0\neps = 0.1\ntheta_deg = 3.0\n"), Err(ConfigError::Invalid(_))));
    }
}
