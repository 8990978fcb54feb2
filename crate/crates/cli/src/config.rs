//! Command-line arguments, the optional TOML config file and their merge.
//!
//! Every option is an `Option` so that an absent flag can fall back to the
//! file, and the file to the built-in default. The resolved job structs
//! hold concrete values and are echoed verbatim into `metadata.json`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dec_ader::quadrature::{AderQuadrature, NodeKind};
use dec_ader::tableaux::{Family, MethodSpec, Mode};
use dec_ader::von_neumann::Plane;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "dec-ader", version, about = "DeC, sDeC and ADER integrators: tableaux, stability scans and experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct GlobalArgs {
    /// Output directory [default: out]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for pseudo-random inputs [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML file with defaults; flags given on the command line win
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Butcher tableau of a method as JSON and CSV
    Tableau(TableauArgs),
    /// ODE stability region: scalar, Minion, D0 or D1
    Stability(StabilityArgs),
    /// Von Neumann stability map and C0 / E0 borders
    Vonneumann(VonNeumannArgs),
    /// Convergence study on an ODE or the periodic PDE
    Convergence(ConvergenceArgs),
    /// Single run of an ODE or PDE problem
    Solve(SolveArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Tableau(_) => "tableau",
            Command::Stability(_) => "stability",
            Command::Vonneumann(_) => "vonneumann",
            Command::Convergence(_) => "convergence",
            Command::Solve(_) => "solve",
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct MethodArgs {
    /// dec, sdec or ader [default: dec]
    #[arg(long)]
    pub family: Option<String>,
    /// eq, glb or glg [default: glb]
    #[arg(long)]
    pub nodes: Option<String>,
    /// Order p ≥ 2 [default: 2]
    #[arg(long)]
    pub order: Option<usize>,
    /// explicit, implicit or imex [default: imex]
    #[arg(long)]
    pub mode: Option<String>,
    /// ADER quadrature: collocated or exact [default: collocated]
    #[arg(long)]
    pub quadrature: Option<String>,
    /// Number of iterations K [default: p]
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TableauArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub method: MethodArgs,
    /// Merge duplicate stages
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub reduce: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct StabilityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub method: MethodArgs,
    /// scalar, minion, d0 or d1 [default: scalar]
    #[arg(long)]
    pub kind: Option<String>,
    /// Grid points per axis [default: 200]
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Shift applied to both axes [default: 0.01]
    #[arg(long, allow_hyphen_values = true)]
    pub offset: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub re_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub re_max: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub im_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub im_max: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct VonNeumannArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub method: MethodArgs,
    /// CD, CE, CP or CEP [default: CE]
    #[arg(long)]
    pub plane: Option<String>,
    /// Advection stencil order [default: p]
    #[arg(long)]
    pub adv: Option<usize>,
    /// Diffusion or dispersion stencil order [default: 2⌈p/2⌉, or 3 on dispersive planes]
    #[arg(long, alias = "disp")]
    pub diff: Option<usize>,
    /// Grid points per axis [default: 400]
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Wavenumbers θ_k = πk/(n0+1) [default: 1000]
    #[arg(long)]
    pub n0: Option<usize>,
    #[arg(long)]
    pub c_min: Option<f64>,
    #[arg(long)]
    pub c_max: Option<f64>,
    /// Lower end of the second (log) axis
    #[arg(long)]
    pub s_min: Option<f64>,
    #[arg(long)]
    pub s_max: Option<f64>,
    /// Write the full map (map.csv, map.pgm) [default: true]
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub map: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub method: MethodArgs,
    /// pde, dahlquist or oscillator [default: pde]
    #[arg(long)]
    pub problem: Option<String>,
    /// Orders of the PDE study [default: 2,3,4,5]
    #[arg(long, value_delimiter = ',')]
    pub orders: Option<Vec<usize>>,
    /// Grid sizes of the PDE study [default: 32,64,128,256,512]
    #[arg(long, value_delimiter = ',')]
    pub cells: Option<Vec<usize>>,
    /// CFL number [default: 0.4]
    #[arg(long)]
    pub cfl: Option<f64>,
    /// E = a²Δt/d [default: 0.5]
    #[arg(long)]
    pub e: Option<f64>,
    /// Largest ODE step [default: 0.5 (dahlquist), 0.01 (oscillator)]
    #[arg(long)]
    pub h0: Option<f64>,
    /// Number of halvings of h0 [default: 6]
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_i: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_e: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SolveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub method: MethodArgs,
    /// dahlquist, oscillator, random or pde [default: dahlquist]
    #[arg(long)]
    pub problem: Option<String>,
    /// ODE step size [default: 0.1]
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_i: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_e: Option<f64>,
    /// Dimension of the random linear system [default: 3]
    #[arg(long)]
    pub dim: Option<usize>,
    /// PDE grid size [default: 64]
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub cfl: Option<f64>,
    /// Diffusion via E = a²Δt/d [default: 0.5 unless --ep is given]
    #[arg(long)]
    pub e: Option<f64>,
    /// Dispersion via E_P = aΔx²/β instead of diffusion
    #[arg(long)]
    pub ep: Option<f64>,
    #[arg(long)]
    pub adv: Option<usize>,
    #[arg(long, alias = "disp")]
    pub diff: Option<usize>,
}

/// Top-level keys of the config file and sections of the commands.
pub struct FileConfig {
    global: Map<String, Value>,
    sections: Map<String, Value>,
}

const COMMANDS: [&str; 5] = ["tableau", "stability", "vonneumann", "convergence", "solve"];

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let table: toml::Table = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let Value::Object(all) = serde_json::to_value(table).expect("TOML maps to JSON") else {
            unreachable!()
        };
        let (mut global, mut sections) = (Map::new(), Map::new());
        for (k, v) in all {
            if COMMANDS.contains(&k.as_str()) {
                sections.insert(k, v);
            } else {
                global.insert(k, v);
            }
        }
        Ok(Self { global, sections })
    }

    pub fn global(&self) -> Value {
        Value::Object(self.global.clone())
    }

    pub fn section(&self, command: &str) -> Value {
        self.sections.get(command).cloned().unwrap_or(Value::Object(Map::new()))
    }
}

/// Flags that were given replace the corresponding file entries; unknown
/// file keys are rejected.
pub fn overlay<T>(flags: &T, file: Option<Value>, context: &str) -> Result<T, CliError>
where
    T: Serialize + DeserializeOwned + Default,
{
    let Some(file) = file else { return Ok(serde_json::from_value(serde_json::to_value(flags)?)?) };
    let Value::Object(mut merged) = file else {
        return Err(CliError::Config(format!("[{context}] in the config file must be a table")));
    };
    let Value::Object(known) = serde_json::to_value(T::default())? else { unreachable!() };
    if let Some(bad) = merged.keys().find(|k| !known.contains_key(*k)) {
        return Err(CliError::Config(format!("unknown key '{bad}' in [{context}] of the config file")));
    }
    let Value::Object(given) = serde_json::to_value(flags)? else { unreachable!() };
    for (k, v) in given {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| CliError::Config(format!("[{context}] in the config file: {e}")))
}

fn parse<T: std::str::FromStr<Err = dec_ader::Error>>(v: &Option<String>, default: &str) -> Result<T, CliError> {
    v.as_deref().unwrap_or(default).parse().map_err(|e: dec_ader::Error| CliError::Config(e.to_string()))
}

/// Resolved method selector as echoed in the metadata.
#[derive(Debug, Clone, Serialize)]
pub struct MethodChoice {
    pub family: Family,
    pub nodes: NodeKind,
    pub order: usize,
    pub mode: Mode,
    pub quadrature: AderQuadrature,
    pub iterations: usize,
}

impl MethodChoice {
    pub fn spec(&self) -> Result<MethodSpec, CliError> {
        Ok(MethodSpec::new(self.family, self.nodes, self.order, self.mode)?
            .with_quadrature(self.quadrature)
            .with_iterations(self.iterations))
    }
}

impl MethodArgs {
    pub fn resolve(&self) -> Result<MethodChoice, CliError> {
        let quadrature = match self.quadrature.as_deref().unwrap_or("collocated") {
            "collocated" => AderQuadrature::Collocated,
            "exact" => AderQuadrature::Exact,
            other => return Err(CliError::Config(format!("unknown quadrature '{other}'"))),
        };
        let order = self.order.unwrap_or(2);
        let choice = MethodChoice {
            family: parse(&self.family, "dec")?,
            nodes: parse(&self.nodes, "glb")?,
            order,
            mode: parse(&self.mode, "imex")?,
            quadrature,
            iterations: self.iterations.unwrap_or(order),
        };
        if choice.iterations == 0 {
            return Err(CliError::Config("iterations must be at least 1".into()));
        }
        choice.spec()?;
        Ok(choice)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Global {
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl GlobalArgs {
    pub fn resolve(&self) -> Global {
        Global {
            out: self.out.clone().unwrap_or_else(|| PathBuf::from("out")),
            seed: self.seed.unwrap_or(0),
            threads: self.threads,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TableauJob {
    pub method: MethodChoice,
    pub reduce: bool,
}

impl TableauArgs {
    pub fn resolve(&self) -> Result<TableauJob, CliError> {
        Ok(TableauJob {
            method: self.method.resolve()?,
            reduce: self.reduce.unwrap_or(false),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Scalar,
    Minion,
    D0,
    D1,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityJob {
    pub method: MethodChoice,
    pub kind: RegionKind,
    pub resolution: usize,
    pub offset: f64,
    pub re: (f64, f64),
    pub im: (f64, f64),
}

impl StabilityArgs {
    pub fn resolve(&self) -> Result<StabilityJob, CliError> {
        let method = self.method.resolve()?;
        let kind = match self.kind.as_deref().unwrap_or("scalar") {
            "scalar" => RegionKind::Scalar,
            "minion" => RegionKind::Minion,
            "d0" => RegionKind::D0,
            "d1" => RegionKind::D1,
            other => return Err(CliError::Config(format!("unknown region kind '{other}'"))),
        };
        if kind != RegionKind::Scalar && method.mode != Mode::Imex {
            return Err(CliError::Config(format!("the {kind:?} region needs an IMEX method")));
        }
        let (re, im) = match kind {
            RegionKind::Scalar => ((-12.0, 4.0), (-8.0, 8.0)),
            RegionKind::Minion => ((-50.0, 0.0), (-50.0, 50.0)),
            RegionKind::D0 | RegionKind::D1 => ((-2.0, 0.5), (-2.0, 2.0)),
        };
        let job = StabilityJob {
            method,
            kind,
            resolution: self.resolution.unwrap_or(200),
            offset: self.offset.unwrap_or(0.01),
            re: (self.re_min.unwrap_or(re.0), self.re_max.unwrap_or(re.1)),
            im: (self.im_min.unwrap_or(im.0), self.im_max.unwrap_or(im.1)),
        };
        if job.resolution < 2 || !(job.re.0 < job.re.1 && job.im.0 < job.im.1) {
            return Err(CliError::Config("need resolution ≥ 2 and increasing ranges".into()));
        }
        Ok(job)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VonNeumannJob {
    pub method: MethodChoice,
    pub plane: Plane,
    pub adv: usize,
    pub diff: usize,
    pub resolution: usize,
    pub n0: usize,
    pub c_range: (f64, f64),
    pub second_range: (f64, f64),
    pub map: bool,
}

impl VonNeumannArgs {
    pub fn resolve(&self) -> Result<VonNeumannJob, CliError> {
        let method = self.method.resolve()?;
        let plane: Plane = parse(&self.plane, "CE")?;
        let (c, s) = (plane.default_c_range(), plane.default_range());
        let k = method.order;
        Ok(VonNeumannJob {
            plane,
            adv: self.adv.unwrap_or(k),
            diff: self.diff.unwrap_or(if plane.is_dispersive() { 3 } else { 2 * k.div_ceil(2) }),
            resolution: self.resolution.unwrap_or(400),
            n0: self.n0.unwrap_or(1000),
            c_range: (self.c_min.unwrap_or(c.0), self.c_max.unwrap_or(c.1)),
            second_range: (self.s_min.unwrap_or(s.0), self.s_max.unwrap_or(s.1)),
            map: self.map.unwrap_or(true),
            method,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "problem", rename_all = "lowercase")]
pub enum ConvergenceJob {
    Pde {
        family: Family,
        nodes: NodeKind,
        orders: Vec<usize>,
        cells: Vec<usize>,
        cfl: f64,
        e: f64,
        t_end: f64,
    },
    Dahlquist {
        method: MethodChoice,
        lambda_i: f64,
        lambda_e: f64,
        h0: f64,
        levels: usize,
        t_end: f64,
    },
    Oscillator {
        method: MethodChoice,
        h0: f64,
        levels: usize,
        t_end: f64,
    },
}

impl ConvergenceArgs {
    pub fn resolve(&self) -> Result<ConvergenceJob, CliError> {
        let levels = self.levels.unwrap_or(6);
        if levels < 3 {
            return Err(CliError::Config("a convergence study needs at least 3 levels".into()));
        }
        Ok(match self.problem.as_deref().unwrap_or("pde") {
            "pde" => {
                let orders = self.orders.clone().unwrap_or_else(|| vec![2, 3, 4, 5]);
                let mut method = self.method.clone();
                for &p in &orders {
                    method.order = Some(p);
                    method.mode = Some("imex".into());
                    method.resolve()?;
                }
                ConvergenceJob::Pde {
                    family: parse(&self.method.family, "dec")?,
                    nodes: parse(&self.method.nodes, "glb")?,
                    orders,
                    cells: self.cells.clone().unwrap_or_else(|| vec![32, 64, 128, 256, 512]),
                    cfl: self.cfl.unwrap_or(0.4),
                    e: self.e.unwrap_or(0.5),
                    t_end: self.t_end.unwrap_or(1.0),
                }
            }
            "dahlquist" => ConvergenceJob::Dahlquist {
                method: self.method.resolve()?,
                lambda_i: self.lambda_i.unwrap_or(-0.5),
                lambda_e: self.lambda_e.unwrap_or(-0.5),
                h0: self.h0.unwrap_or(0.5),
                levels,
                t_end: self.t_end.unwrap_or(1.0),
            },
            "oscillator" => ConvergenceJob::Oscillator {
                method: self.method.resolve()?,
                h0: self.h0.unwrap_or(0.01),
                levels,
                t_end: self.t_end.unwrap_or(1.0),
            },
            other => return Err(CliError::Config(format!("unknown convergence problem '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "problem", rename_all = "lowercase")]
pub enum SolveJob {
    Dahlquist {
        method: MethodChoice,
        lambda_i: f64,
        lambda_e: f64,
        h: f64,
        t_end: f64,
    },
    Oscillator {
        method: MethodChoice,
        h: f64,
        t_end: f64,
    },
    Random {
        method: MethodChoice,
        dim: usize,
        h: f64,
        t_end: f64,
    },
    Pde {
        method: MethodChoice,
        cells: usize,
        cfl: f64,
        /// `{"E": v}` for diffusion, `{"EP": v}` for dispersion.
        second: dec_ader::pde::SecondParameter,
        adv: usize,
        diff: usize,
        t_end: f64,
    },
}

impl SolveArgs {
    pub fn resolve(&self) -> Result<SolveJob, CliError> {
        let method = self.method.resolve()?;
        let h = self.h.unwrap_or(0.1);
        Ok(match self.problem.as_deref().unwrap_or("dahlquist") {
            "dahlquist" => SolveJob::Dahlquist {
                method,
                lambda_i: self.lambda_i.unwrap_or(-0.5),
                lambda_e: self.lambda_e.unwrap_or(-0.5),
                h,
                t_end: self.t_end.unwrap_or(1.0),
            },
            "oscillator" => SolveJob::Oscillator { method, h, t_end: self.t_end.unwrap_or(10.0) },
            "random" => SolveJob::Random {
                method,
                dim: self.dim.unwrap_or(3),
                h,
                t_end: self.t_end.unwrap_or(1.0),
            },
            "pde" => {
                use dec_ader::pde::SecondParameter;
                let k = method.order;
                let second = match (self.e, self.ep) {
                    (Some(_), Some(_)) => return Err(CliError::Config("give either --e or --ep, not both".into())),
                    (_, Some(ep)) => SecondParameter::EP(ep),
                    (e, None) => SecondParameter::E(e.unwrap_or(0.5)),
                };
                let dispersive = matches!(second, SecondParameter::EP(_));
                SolveJob::Pde {
                    cells: self.cells.unwrap_or(64),
                    cfl: self.cfl.unwrap_or(0.4),
                    second,
                    adv: self.adv.unwrap_or(k),
                    diff: self.diff.unwrap_or(if dispersive { 3 } else { 2 * k.div_ceil(2) }),
                    t_end: self.t_end.unwrap_or(1.0),
                    method,
                }
            }
            other => return Err(CliError::Config(format!("unknown problem '{other}'"))),
        })
    }
}
