use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::json;

use paragate::calibration::{
    calibrate_gate, linspace, predict_resonance, simulate_chevron, CalibrationOptions, GateRecipe,
};
use paragate::characterization::{
    run_irb, run_qpt, simulate_gate_channel, CliffordGroup, ConfusionMatrix, FidelityReport, InterleavedGate,
    MleOptions, NativeGates, QptConfig, RbConfig, RbExperiment, Superoperator, DEFAULT_LENGTHS,
};
use paragate::device::{DeviceConfig, DeviceParams};
use paragate::dynamics::NoiseModel;
use paragate::hamiltonian::Transition;
use paragate::units::{angular_to_mhz, mhz_to_angular, ns, us};

use crate::output::RunDir;
use crate::{load_device, CliError, Common};

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Gate {
    Iswap,
    Cz02,
    Cz20,
}

impl Gate {
    fn transition(self) -> Transition {
        match self {
            Gate::Iswap => Transition::Iswap,
            Gate::Cz02 => Transition::Cz02,
            Gate::Cz20 => Transition::Cz20,
        }
    }

    /// Operating amplitude of the measured device, Phi0.
    fn default_amp(self) -> f64 {
        match self {
            Gate::Iswap => 0.317,
            Gate::Cz02 => 0.245,
            Gate::Cz20 => 0.280,
        }
    }
}

/// Coherence used for simulated gate channels.
#[derive(Args, Debug, Clone, Serialize)]
pub struct NoiseArgs {
    /// Simulate without decoherence.
    #[arg(long)]
    pub noiseless: bool,
    /// Override the tunable qubit's T1 under drive (us).
    #[arg(long, value_name = "US")]
    pub t1_us: Option<f64>,
    /// Override the tunable qubit's T2 under drive (us).
    #[arg(long, value_name = "US")]
    pub t2_us: Option<f64>,
}

impl NoiseArgs {
    fn model(&self, device: &DeviceParams, gate: Transition) -> Result<Option<NoiseModel>, CliError> {
        if self.noiseless {
            return Ok(None);
        }
        let mut noise = NoiseModel::for_gate(device, gate);
        if let Some(t1) = self.t1_us {
            noise.t1_t = us(t1);
        }
        if let Some(t2) = self.t2_us {
            noise.driven_t2_t = Some(us(t2));
        }
        noise.validate()?;
        Ok(Some(noise))
    }
}

/// Snapshot of everything that determines a run's output. Written as
/// `config.json` and printed by `--dry-run`.
#[derive(Serialize)]
struct Snapshot<'a, P: Serialize> {
    command: &'a str,
    seed: u64,
    device: &'a DeviceConfig,
    params: &'a P,
    resolved: serde_json::Value,
}

/// Prints the snapshot on a dry run, otherwise opens the run directory and
/// stores it.
fn start<P: Serialize>(common: &Common, snapshot: &Snapshot<P>) -> Result<Option<RunDir>, CliError> {
    if common.dry_run {
        let text = serde_json::to_string_pretty(snapshot).map_err(|e| CliError::Run(e.to_string()))?;
        say(&text);
        return Ok(None);
    }
    let mut dir = RunDir::create(&common.out)?;
    dir.write_json("config.json", snapshot)?;
    Ok(Some(dir))
}

/// Stdout may be a closed pipe (`| head`); that is not an error.
fn say(text: &str) {
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn finish(dir: RunDir, command: &str, seed: u64) -> Result<(), CliError> {
    let path = dir.finish(command, seed)?;
    say(&format!("wrote {}", path.display()));
    Ok(())
}

fn grid(min: f64, max: f64, steps: usize, what: &str) -> Result<Vec<f64>, CliError> {
    if !(min.is_finite() && max.is_finite()) {
        return Err(CliError::Config(format!("{what} grid bounds must be finite")));
    }
    match steps {
        0 => Err(CliError::Config(format!("{what} grid is empty"))),
        1 => Ok(vec![max]),
        _ if max <= min => Err(CliError::Config(format!("{what} grid needs max > min"))),
        _ => Ok(linspace(min, max, steps)),
    }
}

fn read_recipe(path: &PathBuf) -> Result<GateRecipe, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read recipe {}: {e}", path.display())))?;
    GateRecipe::from_json(&text).map_err(|e| CliError::Config(format!("invalid recipe {}: {e}", path.display())))
}

fn parse_lengths(lengths: &Option<Vec<usize>>) -> Vec<usize> {
    lengths.clone().unwrap_or_else(|| DEFAULT_LENGTHS.to_vec())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone, Serialize)]
pub struct ResonanceMapArgs {
    /// Explicit amplitudes in Phi0; overrides the linear grid.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub amps: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0)]
    pub amp_min: f64,
    #[arg(long, default_value_t = 0.35)]
    pub amp_max: f64,
    #[arg(long, default_value_t = 36)]
    pub amp_steps: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub harmonics: Vec<i32>,
}

pub fn resonance_map(common: &Common, args: &ResonanceMapArgs) -> Result<(), CliError> {
    let device_cfg = load_device(common)?;
    let device = device_cfg.to_params()?;
    let amps = match &args.amps {
        Some(a) => a.clone(),
        None if args.amp_steps == 1 => vec![args.amp_min],
        None => grid(args.amp_min, args.amp_max, args.amp_steps, "amplitude")?,
    };
    if amps.is_empty() {
        return Err(CliError::Config("amplitude grid is empty".into()));
    }
    if amps.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(CliError::Config("amplitudes must be finite and non-negative".into()));
    }
    if args.harmonics.is_empty() || args.harmonics.iter().any(|&n| n <= 0) {
        return Err(CliError::Config("harmonics must be positive integers".into()));
    }
    let snapshot = Snapshot {
        command: "resonance-map",
        seed: common.seed,
        device: &device_cfg,
        params: args,
        resolved: json!({ "amps_phi0": amps }),
    };
    let Some(mut dir) = start(common, &snapshot)? else { return Ok(()) };

    let mut csv = String::from("amp_phi0");
    for t in Transition::ALL {
        for n in &args.harmonics {
            csv.push_str(&format!(",{t}_n{n}_f_p_MHz,{t}_n{n}_g_eff_MHz"));
        }
    }
    csv.push('\n');
    for &amp in &amps {
        csv.push_str(&format!("{amp:.6}"));
        for t in Transition::ALL {
            for &n in &args.harmonics {
                // transitions without a positive-frequency resonance leave blank cells
                match predict_resonance(&device, t, amp, n) {
                    Ok(p) => {
                        csv.push_str(&format!(",{:.6},{:.6}", angular_to_mhz(p.omega_p_star), angular_to_mhz(p.g_eff)))
                    }
                    Err(paragate::Error::NoResonance { .. }) => csv.push_str(",,"),
                    Err(e) => return Err(e.into()),
                }
            }
        }
        csv.push('\n');
    }
    dir.write("resonance_map.csv", csv.as_bytes())?;
    finish(dir, "resonance-map", common.seed)
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone, Serialize)]
pub struct ChevronArgs {
    #[arg(long, value_enum)]
    pub gate: Gate,
    /// Modulation amplitude, Phi0.
    #[arg(long)]
    pub amp: f64,
    #[arg(long, default_value_t = 1)]
    pub harmonic: i32,
    /// Centre of the frequency grid; defaults to the predicted resonance.
    #[arg(long, value_name = "MHZ")]
    pub f_center_mhz: Option<f64>,
    /// Full width of the frequency grid; defaults to ten coupling widths.
    #[arg(long, value_name = "MHZ")]
    pub f_span_mhz: Option<f64>,
    #[arg(long, default_value_t = 41)]
    pub f_steps: usize,
    #[arg(long, default_value_t = 0.0)]
    pub t_min_ns: f64,
    #[arg(long, default_value_t = 400.0)]
    pub t_max_ns: f64,
    #[arg(long, default_value_t = 81)]
    pub t_steps: usize,
    /// Edge length of the pulses; 0 gives square pulses.
    #[arg(long, default_value_t = 0.0)]
    pub risetime_ns: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[command(flatten)]
    pub noise: NoiseArgs,
}

pub fn chevron(common: &Common, args: &ChevronArgs) -> Result<(), CliError> {
    let device_cfg = load_device(common)?;
    let device = device_cfg.to_params()?;
    let kind = args.gate.transition();
    let prediction = predict_resonance(&device, kind, args.amp, args.harmonic)?;
    let g_mhz = angular_to_mhz(prediction.g_eff.abs());
    let center = args.f_center_mhz.unwrap_or(angular_to_mhz(prediction.omega_p_star));
    let span = args.f_span_mhz.unwrap_or((10.0 * g_mhz / args.harmonic as f64).max(1.0));
    if !(span > 0.0) {
        return Err(CliError::Config("frequency span must be positive".into()));
    }
    let freqs_mhz = if args.f_steps == 1 {
        vec![center]
    } else {
        grid(center - span / 2.0, center + span / 2.0, args.f_steps, "frequency")?
    };
    let durations_ns = grid(args.t_min_ns, args.t_max_ns, args.t_steps, "duration")?;
    if args.risetime_ns < 0.0 {
        return Err(CliError::Config("risetime must be non-negative".into()));
    }
    let noise = args.noise.model(&device, kind)?;
    let snapshot = Snapshot {
        command: "chevron",
        seed: common.seed,
        device: &device_cfg,
        params: args,
        resolved: json!({
            "predicted_f_p_MHz": angular_to_mhz(prediction.omega_p_star),
            "predicted_g_eff_MHz": angular_to_mhz(prediction.g_eff),
            "f_center_MHz": center,
            "f_span_MHz": span,
            "frequencies_MHz": freqs_mhz,
            "durations_ns": durations_ns,
        }),
    };
    let Some(mut dir) = start(common, &snapshot)? else { return Ok(()) };

    let freqs: Vec<f64> = freqs_mhz.iter().map(|&f| mhz_to_angular(f)).collect();
    let durations: Vec<f64> = durations_ns.iter().map(|&t| ns(t)).collect();
    let scan = simulate_chevron(
        &device,
        noise.as_ref(),
        kind,
        args.amp,
        &freqs,
        &durations,
        kind.levels().0,
        ns(args.risetime_ns),
        args.tol,
    )?;
    dir.write_with("chevron.csv", |buf| scan.write_csv(buf))?;
    let mut sidecar = scan.sidecar();
    sidecar["harmonic_n"] = json!(args.harmonic);
    sidecar["noisy"] = json!(noise.is_some());
    sidecar["predicted_f_p_MHz"] = json!(angular_to_mhz(prediction.omega_p_star));
    sidecar["predicted_g_eff_MHz"] = json!(angular_to_mhz(prediction.g_eff));
    sidecar["max_transfer_f_p_MHz"] = json!(angular_to_mhz(scan.max_transfer_frequency()));
    dir.write_json("chevron.json", &sidecar)?;
    if !scan.failures.is_empty() {
        eprintln!("warning: {} chevron cells failed; see chevron.json", scan.failures.len());
    }
    finish(dir, "chevron", common.seed)
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone, Serialize)]
pub struct CalibrateArgs {
    #[arg(long, value_enum)]
    pub gate: Gate,
    /// Modulation amplitude, Phi0; defaults to the gate's usual operating point.
    #[arg(long)]
    pub amp: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub harmonic: i32,
    #[arg(long, default_value_t = 40.0)]
    pub risetime_ns: f64,
    /// Shortest edge tried by the iSWAP edge search.
    #[arg(long, default_value_t = 30.0)]
    pub min_risetime_ns: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 0.98)]
    pub min_figure_of_merit: f64,
}

pub fn calibrate(common: &Common, args: &CalibrateArgs) -> Result<(), CliError> {
    let device_cfg = load_device(common)?;
    let device = device_cfg.to_params()?;
    let kind = args.gate.transition();
    let amp = args.amp.unwrap_or(args.gate.default_amp());
    if !(args.min_risetime_ns > 0.0 && args.min_risetime_ns <= args.risetime_ns) {
        return Err(CliError::Config("need 0 < min-risetime <= risetime".into()));
    }
    let opts = CalibrationOptions {
        risetime: ns(args.risetime_ns),
        min_risetime: ns(args.min_risetime_ns),
        tol: args.tol,
        min_figure_of_merit: args.min_figure_of_merit,
        ..Default::default()
    };
    let prediction = predict_resonance(&device, kind, amp, args.harmonic)?;
    let snapshot = Snapshot {
        command: "calibrate",
        seed: common.seed,
        device: &device_cfg,
        params: args,
        resolved: json!({
            "amp_phi0": amp,
            "predicted_f_p_MHz": angular_to_mhz(prediction.omega_p_star),
            "predicted_g_eff_MHz": angular_to_mhz(prediction.g_eff),
        }),
    };
    let Some(mut dir) = start(common, &snapshot)? else { return Ok(()) };

    match calibrate_gate(&device, kind, &prediction, opts) {
        Ok(recipe) => {
            let mut text = recipe.to_json()?;
            text.push('\n');
            dir.write("recipe.json", text.as_bytes())?;
            dir.write("summary.txt", recipe.summary().as_bytes())?;
            say(recipe.summary().trim_end());
            finish(dir, "calibrate", common.seed)
        }
        Err(e) => {
            let message = e.to_string();
            dir.write_json(
                "calibration_failure.json",
                &json!({ "gate": kind, "amp_phi0": amp, "prediction": prediction, "message": message }),
            )?;
            dir.finish("calibrate", common.seed)?;
            Err(CliError::Run(message))
        }
    }
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone, Serialize)]
pub struct RbSettings {
    /// Sequence lengths.
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<usize>>,
    #[arg(long, default_value_t = 30)]
    pub sequences: usize,
    /// Shots per sequence.
    #[arg(long, default_value_t = 1000)]
    pub rb_shots: u64,
    /// Record exact survival probabilities instead of sampled shots.
    #[arg(long)]
    pub exact: bool,
    #[arg(long, default_value_t = 200)]
    pub bootstrap: usize,
}

impl RbSettings {
    fn config(&self, seed: u64) -> Result<RbConfig, CliError> {
        let cfg = RbConfig {
            lengths: parse_lengths(&self.lengths),
            sequences_per_length: self.sequences,
            shots: if self.exact { None } else { Some(self.rb_shots) },
            seed,
            bootstrap_samples: self.bootstrap,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

fn write_rb(dir: &mut RunDir, rb: &RbExperiment, extra: serde_json::Value) -> Result<(), CliError> {
    dir.write_with("rb_reference.csv", |buf| rb.write_csv(false, buf))?;
    if rb.interleaved.is_some() {
        dir.write_with("rb_interleaved.csv", |buf| rb.write_csv(true, buf))?;
    }
    let mut fit = json!({
        "interleaved_gate": rb.interleaved_gate,
        "lengths": rb.lengths,
        "sequences_per_length": rb.sequences_per_length,
        "reference": rb.fit_reference,
        "interleaved": rb.fit_interleaved,
        "clifford_fidelity": rb.clifford_fidelity(),
        "irb_fidelity": rb.irb_fidelity(),
    });
    if let (Some(obj), serde_json::Value::Object(more)) = (fit.as_object_mut(), extra) {
        obj.extend(more);
    }
    dir.write_json("rb_fit.json", &fit)
}

/// Simulated channel of a recipe with its per-gate noise.
fn recipe_channel(
    device: &DeviceParams,
    recipe: &GateRecipe,
    noise: &NoiseArgs,
    tol: f64,
) -> Result<(Superoperator, f64), CliError> {
    let model = noise.model(device, recipe.gate_kind)?;
    Ok(simulate_gate_channel(device, recipe, model.as_ref(), tol)?)
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CharacterizeArgs {
    /// Recipe of the gate to characterize.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub recipe: PathBuf,
    /// Recipe of the other native entangler used inside RB Cliffords;
    /// without it that native is ideal.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub native_recipe: Option<PathBuf>,
    /// Run process tomography (default: both QPT and IRB).
    #[arg(long)]
    pub qpt: bool,
    /// Run interleaved RB (default: both QPT and IRB).
    #[arg(long)]
    pub irb: bool,
    /// Shots per tomography setting.
    #[arg(long, default_value_t = 10_000)]
    pub shots: u64,
    /// Assignment fidelity of the fixed qubit.
    #[arg(long, default_value_t = 1.0)]
    pub readout_fixed: f64,
    /// Assignment fidelity of the tunable qubit.
    #[arg(long, default_value_t = 1.0)]
    pub readout_tunable: f64,
    /// Ignore the readout model in the reconstruction.
    #[arg(long)]
    pub no_compensation: bool,
    #[arg(long, default_value_t = 20_000)]
    pub mle_max_iterations: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub mle_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub rb: RbSettings,
}

pub fn characterize(common: &Common, args: &CharacterizeArgs) -> Result<(), CliError> {
    let device_cfg = load_device(common)?;
    let device = device_cfg.to_params()?;
    let recipe = read_recipe(&args.recipe)?;
    let native = args.native_recipe.as_ref().map(read_recipe).transpose()?;
    let (do_qpt, do_irb) = if args.qpt || args.irb { (args.qpt, args.irb) } else { (true, true) };
    if do_qpt && args.shots == 0 {
        return Err(CliError::Config("shots must be positive".into()));
    }
    let confusion = ConfusionMatrix::from_fidelities(args.readout_fixed, args.readout_tunable)?;
    let rb_cfg = if do_irb { Some(args.rb.config(rb_seed(common.seed))?) } else { None };
    if let Some(n) = &native {
        if (n.gate_kind == Transition::Iswap) == (recipe.gate_kind == Transition::Iswap) {
            return Err(CliError::Config("native recipe must be the other entangler family".into()));
        }
    }
    let snapshot = Snapshot {
        command: "characterize",
        seed: common.seed,
        device: &device_cfg,
        params: args,
        resolved: json!({
            "recipe": recipe,
            "native_recipe": native,
            "qpt": do_qpt,
            "irb": do_irb,
            "rb_lengths": rb_cfg.as_ref().map(|c| c.lengths.clone()),
        }),
    };
    let Some(mut dir) = start(common, &snapshot)? else { return Ok(()) };

    let (channel, loss) = recipe_channel(&device, &recipe, &args.noise, args.tol)?;
    let target = recipe.target_unitary();
    let mut report = FidelityReport { gate: recipe.gate_kind.to_string(), ..Default::default() };

    if do_qpt {
        let cfg = QptConfig {
            shots: args.shots,
            confusion: confusion.clone(),
            compensate: !args.no_compensation,
            seed: common.seed,
            mle: MleOptions { tp: true, max_iterations: args.mle_max_iterations, tol: args.mle_tol },
        };
        let (data, outcome) = run_qpt(&channel, &target, &cfg)?;
        dir.write_with("tomography_counts.csv", |buf| data.write_csv(buf))?;
        dir.write_json(
            "qpt.json",
            &json!({
                "fidelity": outcome.fidelity,
                "true_fidelity": outcome.true_fidelity,
                "interferometric_bound": outcome.bounds.interferometric,
                "procrustean_bound": outcome.bounds.procrustean,
                "leading_kraus_tie": outcome.bounds.leading_kraus_tie,
                "log_likelihood": outcome.reconstruction.log_likelihood,
                "iterations": outcome.reconstruction.iterations,
                "converged": outcome.reconstruction.converged,
                "min_choi_eigenvalue": outcome.reconstruction.channel.min_choi_eigenvalue(),
                "mean_leakage": loss,
            }),
        )?;
        report = report.with_qpt(&outcome);
    }

    if let Some(cfg) = rb_cfg {
        let mut natives = NativeGates::ideal();
        match recipe.gate_kind {
            Transition::Iswap => natives.iswap = channel.clone(),
            _ => natives.cz = channel.clone(),
        }
        match &native {
            Some(n) => {
                let (other, _) = recipe_channel(&device, n, &args.noise, args.tol)?;
                match n.gate_kind {
                    Transition::Iswap => natives.iswap = other,
                    _ => natives.cz = other,
                }
            }
            None => report.notes.push(format!(
                "RB native {} treated as ideal (no recipe given)",
                if recipe.gate_kind == Transition::Iswap { "CZ" } else { "iSWAP" }
            )),
        }
        let gate = InterleavedGate { name: recipe.gate_kind.to_string(), channel: channel.clone(), target };
        let group = CliffordGroup::two_qubit();
        let rb = run_irb(&group, &natives, Some(&gate), &cfg)?;
        write_rb(&mut dir, &rb, json!({}))?;
        report = report.with_rb(&rb);
    }

    report.validate()?;
    dir.write_json("report.json", &report)?;
    say(&serde_json::to_string_pretty(&report).map_err(|e| CliError::Run(e.to_string()))?);
    finish(dir, "characterize", common.seed)
}

/// RB draws from a seed distinct from tomography's so the two experiments
/// of one run do not share random streams.
fn rb_seed(seed: u64) -> u64 {
    seed.wrapping_add(0x9e37_79b9_7f4a_7c15)
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone, Serialize)]
pub struct RbArgs {
    /// Interleaved gate.
    #[arg(long, value_enum, default_value = "iswap")]
    pub gate: Gate,
    /// Average infidelity of a depolarizing error added after each
    /// interleaved gate.
    #[arg(long, default_value_t = 0.0)]
    pub inject: f64,
    /// Simulate the iSWAP native from this recipe instead of using the ideal gate.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub iswap_recipe: Option<PathBuf>,
    /// Simulate the CZ native from this recipe instead of using the ideal gate.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub cz_recipe: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub rb: RbSettings,
}

pub fn rb(common: &Common, args: &RbArgs) -> Result<(), CliError> {
    let device_cfg = load_device(common)?;
    let device = device_cfg.to_params()?;
    // d = 4: a depolarizing map has average infidelity at most 3/4
    if !(0.0..0.75).contains(&args.inject) {
        return Err(CliError::Config("injected infidelity must lie in [0, 0.75)".into()));
    }
    let iswap = args.iswap_recipe.as_ref().map(read_recipe).transpose()?;
    let cz = args.cz_recipe.as_ref().map(read_recipe).transpose()?;
    if iswap.as_ref().is_some_and(|r| r.gate_kind != Transition::Iswap) {
        return Err(CliError::Config("--iswap-recipe is not an iswap recipe".into()));
    }
    if cz.as_ref().is_some_and(|r| r.gate_kind == Transition::Iswap) {
        return Err(CliError::Config("--cz-recipe is not a cz recipe".into()));
    }
    let cfg = args.rb.config(common.seed)?;
    let snapshot = Snapshot {
        command: "rb",
        seed: common.seed,
        device: &device_cfg,
        params: args,
        resolved: json!({ "iswap_recipe": iswap, "cz_recipe": cz, "rb": cfg }),
    };
    let Some(mut dir) = start(common, &snapshot)? else { return Ok(()) };

    let mut natives = NativeGates::ideal();
    if let Some(r) = &iswap {
        natives.iswap = recipe_channel(&device, r, &args.noise, args.tol)?.0;
    }
    if let Some(r) = &cz {
        natives.cz = recipe_channel(&device, r, &args.noise, args.tol)?.0;
    }
    let (native, target) = match args.gate {
        Gate::Iswap => (&natives.iswap, paragate::characterization::superop::gates::iswap()),
        _ => (&natives.cz, paragate::characterization::superop::gates::cz()),
    };
    let channel = Superoperator::depolarizing_with_infidelity(4, args.inject).compose(native);
    let gate = InterleavedGate { name: format!("{:?}", args.gate).to_lowercase(), channel, target };
    let group = CliffordGroup::two_qubit();
    let rb = run_irb(&group, &natives, Some(&gate), &cfg)?;
    let extra = json!({ "injected_infidelity": args.inject });
    write_rb(&mut dir, &rb, extra)?;
    say(&format!(
        "Clifford fidelity {:.5}, IRB fidelity {:.5}",
        rb.clifford_fidelity(),
        rb.irb_fidelity().unwrap_or(f64::NAN)
    ));
    finish(dir, "rb", common.seed)
}
