//! One function per subcommand; each writes CSV tables and a JSON envelope.

use std::f64::consts::PI;

use rayon::prelude::*;
use rydex::density::PhotonDensityMatrix;
use rydex::params::{mhz_to_angular, Derived, Dressing, SystemParams};
use rydex::scatter1d::{Medium, Model, ScatterCoeffs};
use rydex::subtractor::{self, PhotonStatistics, SubtractorInput};
use rydex::timedomain::{self, FieldTrace, PulseShape};
use rydex::transport::Channel;
use rydex::twophoton::{self, TwoPhotonLedger, TwoPhotonModel};
use rydex::Complex64;
use serde::Serialize;
use serde_json::json;

use crate::config::{CoefficientsConfig, RunConfig, Scale, SweepConfig};
use crate::error::{CliError, CliResult, Context};
use crate::output::{Output, Series, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    ScatterSweep,
    Spectrum,
    Pulse,
    Subtract,
    Optimize,
    TwoPhoton,
    Repeater,
    Feasibility,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::ScatterSweep => "scatter-sweep",
            Command::Spectrum => "spectrum",
            Command::Pulse => "pulse",
            Command::Subtract => "subtract",
            Command::Optimize => "optimize",
            Command::TwoPhoton => "two-photon",
            Command::Repeater => "repeater",
            Command::Feasibility => "feasibility",
        }
    }

    fn stem(self) -> String {
        self.name().replace('-', "_")
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a RunConfig,
    derived: Option<Derived>,
    results: T,
}

fn envelope<T: Serialize>(
    out: &mut Output,
    cmd: Command,
    cfg: &RunConfig,
    derived: Option<Derived>,
    results: T,
) -> CliResult<()> {
    let env = Envelope { tool: "rydex", version: env!("CARGO_PKG_VERSION"), command: cmd.name(), config: cfg, derived, results };
    out.json(&format!("{}.json", cmd.stem()), &env)
}

pub fn run(cmd: Command, cfg: &RunConfig, out: &mut Output) -> CliResult<()> {
    match cmd {
        Command::ScatterSweep => scatter_sweep(cfg, out),
        Command::Spectrum => spectrum(cfg, out),
        Command::Pulse => pulse(cfg, out),
        Command::Subtract => subtract(cfg, out),
        Command::Optimize => optimize(cfg, out),
        Command::TwoPhoton => two_photon(cfg, out),
        Command::Repeater => repeater(cfg, out),
        Command::Feasibility => feasibility(cfg, out),
    }
}

fn medium(cfg: &RunConfig, p: SystemParams) -> CliResult<Medium> {
    Ok(Medium::new(p)?.with_settings(cfg.solver))
}

fn with_quantity(mut p: SystemParams, quantity: &str, x: f64) -> CliResult<SystemParams> {
    match quantity {
        "od_c" => p.od_c = x,
        "r_perp_um" => p.r_perp = x,
        "xi" => match &mut p.dressing {
            Dressing::Ratio { xi, .. } => *xi = x,
            Dressing::Microscopic { .. } => {
                return Err(CliError::config("sweep.quantity", "xi sweeps need the ratio dressing mode"))
            }
        },
        other => return Err(CliError::config("sweep.quantity", format!("unsupported quantity `{other}`"))),
    }
    Ok(p)
}

fn coeff_row(x: f64, c: &ScatterCoeffs) -> [f64; 8] {
    [x, c.t_coeff.re, c.t_coeff.im, c.r_coeff.re, c.r_coeff.im, c.loss, c.transmission(), c.reflection()]
}

fn series(label: &str, xs: &[f64], ys: impl IntoIterator<Item = f64>) -> Series {
    (label.to_string(), xs.iter().copied().zip(ys).collect())
}

#[derive(Serialize)]
struct ScatterPoint {
    x: f64,
    line: ScatterCoeffs,
    beam: ScatterCoeffs,
    derived: Derived,
}

fn scatter_sweep(cfg: &RunConfig, out: &mut Output) -> CliResult<()> {
    let base = cfg.system_params()?;
    let sweep = cfg.sweep_or(SweepConfig::new("od_c", 1.0, 120.0, 120, Scale::Linear));
    let xs = sweep.values(&["od_c", "xi", "r_perp_um"])?;
    let points = xs
        .par_iter()
        .map(|&x| {
            let p = with_quantity(base, &sweep.quantity, x)?;
            let m = medium(cfg, p)?;
            let at = || format!("{} = {x}", sweep.quantity);
            let line = m.solve_scattering(0.0, p.r_perp).context(at)?;
            let beam = m.beam_average(0.0).context(at)?;
            Ok(ScatterPoint { x, line, beam, derived: *m.derived() })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let header = [sweep.quantity.as_str(), "T_re", "T_im", "R_re", "R_im", "loss", "|T|2", "|R|2"];
    let (mut line, mut beam) = (Table::new(&header), Table::new(&header));
    for p in &points {
        line.push_numbers(coeff_row(p.x, &p.line));
        beam.push_numbers(coeff_row(p.x, &p.beam));
    }
    out.csv("scatter_1d.csv", &line)?;
    out.csv("scatter_beam.csv", &beam)?;
    out.plot(
        "scatter.svg",
        "scattering at zero detuning",
        (&sweep.quantity, "probability"),
        &[
            series("|T|^2 1D", &xs, points.iter().map(|p| p.line.transmission())),
            series("|R|^2 1D", &xs, points.iter().map(|p| p.line.reflection())),
            series("|T|^2 beam", &xs, points.iter().map(|p| p.beam.transmission())),
            series("|R|^2 beam", &xs, points.iter().map(|p| p.beam.reflection())),
        ],
    )?;
    let peak = points.iter().max_by(|a, b| a.line.reflection().total_cmp(&b.line.reflection())).map(|p| json!({"x": p.x, "r2": p.line.reflection()}));
    let results = json!({"quantity": sweep.quantity, "solver": cfg.solver, "max_reflection_1d": peak, "points": points});
    envelope(out, Command::ScatterSweep, cfg, Some(base.derive()?), results)
}

fn spectrum(cfg: &RunConfig, out: &mut Output) -> CliResult<()> {
    let p = cfg.system_params()?;
    let m = medium(cfg, p)?;
    let s = cfg.spectrum;
    let gamma = m.derived().eit_bandwidth;
    let axis = SweepConfig::new("omega_over_Gamma", s.omega_min, s.omega_max, s.points, Scale::Linear);
    let xs = axis.values(&["omega_over_Gamma"]).map_err(|e| match e {
        CliError::Config { field, reason } => CliError::config(field.replace("sweep", "spectrum"), reason),
        other => other,
    })?;
    let omegas: Vec<f64> = xs.iter().map(|x| x * gamma).collect();
    let mut curves = Vec::new();
    let mut plots = Vec::new();
    for (model, tag) in [(Model::Full, "full"), (Model::Polariton, "polariton")] {
        let sp = m.spectrum_with(model, &omegas, p.r_perp).context(|| format!("{tag} spectrum"))?;
        let mut t = Table::new(&["omega_over_Gamma", "|T|2", "|R|2"]);
        for (x, c) in xs.iter().zip(&sp.coeffs) {
            t.push_numbers([*x, c.transmission(), c.reflection()]);
        }
        out.csv(&format!("spectrum_{tag}.csv"), &t)?;
        plots.push(series(&format!("|T|^2 {tag}"), &xs, sp.coeffs.iter().map(|c| c.transmission())));
        plots.push(series(&format!("|R|^2 {tag}"), &xs, sp.coeffs.iter().map(|c| c.reflection())));
        curves.push(json!({"model": tag, "coeffs": sp.coeffs}));
    }
    out.plot("spectrum.svg", "scattering spectra", ("omega / Gamma", "probability"), &plots)?;
    let results = json!({"omega_over_Gamma": xs, "spectra": curves, "band_limit": m.band_limit()});
    envelope(out, Command::Spectrum, cfg, Some(*m.derived()), results)
}

fn trace_table(trace: &FieldTrace) -> Table {
    let mut t = Table::new(&["time_us", "up_re", "up_im", "down_re", "down_im"]);
    for ((&time, u), d) in trace.times.iter().zip(trace.channel(Channel::Up)).zip(trace.channel(Channel::Down)) {
        t.push_numbers([time, u.re, u.im, d.re, d.im]);
    }
    t
}

fn pulse(cfg: &RunConfig, out: &mut Output) -> CliResult<()> {
    let p = cfg.system_params()?;
    let m = medium(cfg, p)?;
    let pc = cfg.pulse;
    let shape = PulseShape::gaussian(pc.dt_times_gamma / m.derived().eit_bandwidth, 0.0)?;
    let syn = timedomain::synthesize_response(&m, &shape, p.r_perp, &pc.synthesis).context(|| "spectral synthesis".into())?;
    let dsp = timedomain::evolve_dsp(&m, &shape, p.r_perp, &pc.dsp).context(|| "polariton time stepping".into())?;
    out.csv("trace_synthesis.csv", &trace_table(&syn.trace))?;
    out.csv("trace_dsp.csv", &trace_table(&dsp.trace))?;
    let intensity = |tr: &FieldTrace, ch: Channel, label: &str| -> Series {
        (label.into(), tr.times.iter().zip(tr.channel(ch)).map(|(&t, e)| (t, e.norm_sqr())).collect())
    };
    out.plot(
        "pulse.svg",
        "output intensities",
        ("time (us)", "|E|^2"),
        &[
            intensity(&syn.trace, Channel::Up, "up synthesis"),
            intensity(&dsp.trace, Channel::Up, "up polariton"),
            intensity(&syn.trace, Channel::Down, "down synthesis"),
            intensity(&dsp.trace, Channel::Down, "down polariton"),
        ],
    )?;
    let per_channel = |ch: Channel| {
        json!({
            "relative_l2_error": syn.trace.relative_l2_error(&dsp.trace, ch),
            "relative_intensity_error": syn.trace.relative_intensity_error(&dsp.trace, ch),
            "energy_synthesis": syn.trace.energy(ch),
            "energy_polariton": dsp.trace.energy(ch),
            "overlap_fidelity_synthesis": syn.trace.overlap_fidelity(ch, &shape),
            "overlap_fidelity_polariton": dsp.trace.overlap_fidelity(ch, &shape),
        })
    };
    let results = json!({
        "pulse": shape,
        "up": per_channel(Channel::Up),
        "down": per_channel(Channel::Down),
        "polariton_norm": dsp.norm,
    });
    envelope(out, Command::Pulse, cfg, Some(*m.derived()), results)
}

fn lossless(r2: f64, theta: f64) -> CliResult<(Complex64, Complex64)> {
    if !(0.0..=1.0).contains(&r2) {
        return Err(CliError::config("r2", format!("must lie in [0, 1], got {r2}")));
    }
    Ok((Complex64::from_polar((1.0 - r2).sqrt(), theta), Complex64::new(r2.sqrt(), 0.0)))
}

fn thetas(points: usize) -> CliResult<Vec<f64>> {
    SweepConfig::new("theta_rad", 0.0, PI, points, Scale::Linear).values(&["theta_rad"])
}

fn density_table(rho: &PhotonDensityMatrix) -> Table {
    let mut t = Table::new(&["x", "y", "rho_re", "rho_im"]);
    for (x, y, z) in rho.entries() {
        t.push_numbers([x, y, z.re, z.im]);
    }
    t
}

fn magnitude_table(rho: &PhotonDensityMatrix) -> CliResult<Table> {
    let m = rho.normalized_magnitude()?;
    let p = &rho.grid.points;
    let mut t = Table::new(&["x", "y", "abs_rho_over_eta"]);
    for (i, &x) in p.iter().enumerate() {
        for (j, &y) in p.iter().enumerate() {
            t.push_numbers([x, y, m[(i, j)]]);
        }
    }
    Ok(t)
}

fn tag(r2: f64) -> String {
    format!("{r2:.3}")
}

fn subtract(cfg: &RunConfig, out: &mut Output) -> CliResult<()> {
    let sc = &cfg.subtract;
    let sweep = cfg.sweep_or(SweepConfig::new("r2", 0.01, 0.99, 99, Scale::Linear));
    let r2s = sweep.values(&["r2"])?;
    let curve = match sc.statistics {
        PhotonStatistics::Fock { n } => subtractor::fock_tradeoff(n, &r2s, sc.theta_rad),
        PhotonStatistics::Coherent { alpha2 } => subtractor::coherent_tradeoff(alpha2, &r2s, sc.theta_rad),
    }
    .context(|| "trade-off curve".into())?;
    let mut t = Table::new(&["r2", "eta", "purity"]);
    for p in &curve {
        t.push_numbers([p.r2, p.eta, p.purity]);
    }
    out.csv("tradeoff.csv", &t)?;
    let th = thetas(sc.phase_points)?;
    let phase = match sc.statistics {
        PhotonStatistics::Fock { n } => subtractor::fock_purity_vs_phase(n, sc.phase_r2, &th),
        PhotonStatistics::Coherent { alpha2 } => subtractor::purity_vs_phase(alpha2, sc.phase_r2, &th),
    }
    .context(|| "phase curve".into())?;
    let mut pt = Table::new(&["theta_rad", "purity"]);
    for &(a, b) in &phase {
        pt.push_numbers([a, b]);
    }
    out.csv("phase.csv", &pt)?;
    let pulse = PulseShape::gaussian(1.0, 0.0)?;
    let grid = subtractor::pulse_grid(&pulse, sc.grid_points)?;
    let mut matrices = Vec::new();
    for &r2 in &sc.density_r2 {
        let (tc, rc) = lossless(r2, sc.theta_rad)?;
        let input = SubtractorInput::new(sc.statistics, tc, rc, pulse, grid.clone())?;
        let rho = subtractor::density_matrix(&input);
        rho.check_invariants().context(|| format!("density matrix at |R|^2 = {r2}"))?;
        out.csv(&format!("rho_r2_{}.csv", tag(r2)), &density_table(&rho))?;
        out.csv(&format!("rho_abs_r2_{}.csv", tag(r2)), &magnitude_table(&rho)?)?;
        matrices.push(json!({"r2": r2, "eta": rho.trace(), "purity": rho.purity()?, "grid_points": rho.grid.len()}));
    }
    out.plot(
        "tradeoff.svg",
        "efficiency and purity",
        ("|R|^2", "value"),
        &[
            series("eta", &r2s, curve.iter().map(|p| p.eta)),
            series("purity", &r2s, curve.iter().map(|p| p.purity)),
        ],
    )?;
    out.plot("phase.svg", "purity versus phase", ("theta (rad)", "purity"), &[series("purity", &th, phase.iter().map(|p| p.1))])?;
    let results = json!({"tradeoff": curve, "phase_r2": sc.phase_r2, "density_matrices": matrices});
    envelope(out, Command::Subtract, cfg, None, results)
}

fn optimize(cfg: &RunConfig, out: &mut Output) -> CliResult<()> {
    let oc = &cfg.optimize;
    let sweep = cfg.sweep_or(SweepConfig::new("alpha2", 1.0, 100.0, 21, Scale::Log));
    let alphas = sweep.values(&["alpha2"])?;
    let mut t = Table::new(&["alpha2", "r2_opt", "eta", "purity"]);
    let (mut found, mut missing) = (Vec::new(), Vec::new());
    for &a in &alphas {
        match subtractor::optimize_rate(a, oc.theta_rad) {
            Ok(o) => {
                t.push_numbers([a, o.r2, o.eta, o.purity]);
                found.push((a, o));
            }
            Err(rydex::Error::RootNotBracketed { .. }) => {
                log::warn!("no eta = purity crossing at |alpha|^2 = {a}");
                missing.push(a);
            }
            Err(e) => return Err(e).context(|| format!("optimizer at |alpha|^2 = {a}")),
        }
    }
    if found.is_empty() {
        return Err(CliError::Numerical {
            context: "optimizer".into(),
            source: rydex::Error::RootNotBracketed { lo: subtractor::RATE_EDGE, hi: 1.0 - subtractor::RATE_EDGE },
        });
    }
    out.csv("optimize.csv", &t)?;
    let th = thetas(oc.phase_points)?;
    let mut pt = Table::new(&["alpha2", "r2_opt", "theta_rad", "purity", "large_alpha_purity"]);
    let mut curves = Vec::new();
    for &a in &oc.phase_alpha2 {
        let o = subtractor::optimize_rate(a, 0.0).context(|| format!("optimizer at |alpha|^2 = {a}"))?;
        let curve = subtractor::purity_vs_phase(a, o.r2, &th)?;
        let t_abs = (1.0 - o.r2).sqrt();
        for &(theta, p) in &curve {
            pt.push_numbers([a, o.r2, theta, p, subtractor::large_alpha_purity(t_abs, theta)]);
        }
        curves.push(series(&format!("|alpha|^2 = {a}"), &th, curve.iter().map(|c| c.1)));
    }
    out.csv("phase.csv", &pt)?;
    let xs: Vec<f64> = found.iter().map(|f| f.0).collect();
    out.plot(
        "optimize.svg",
        "optimal rate",
        ("|alpha|^2", "value"),
        &[
            series("eta = purity", &xs, found.iter().map(|f| f.1.eta)),
            series("|R_opt|^2", &xs, found.iter().map(|f| f.1.r2)),
        ],
    )?;
    out.plot("phase.svg", "purity at the optimal rate", ("theta (rad)", "purity"), &curves)?;
    let optimal: Vec<_> = found.iter().map(|(a, o)| json!({"alpha2": a, "optimum": o})).collect();
    let results = json!({"theta_rad": oc.theta_rad, "optimal": optimal, "no_crossing_alpha2": missing});
    envelope(out, Command::Optimize, cfg, None, results)
}

#[derive(Serialize)]
struct TwoPhotonPoint {
    r2_target: f64,
    r2_lattice: f64,
    eta: f64,
    purity: f64,
    eta_exact: f64,
    purity_exact: f64,
    n_eff: f64,
    ledger: TwoPhotonLedger,
    #[serde(skip)]
    rho: PhotonDensityMatrix,
    #[serde(skip)]
    exact_rho: PhotonDensityMatrix,
}

fn two_photon_point(cfg: &RunConfig, r2: f64) -> CliResult<TwoPhotonPoint> {
    let tc = &cfg.two_photon;
    let at = || format!("two-photon run at |R|^2 = {r2}");
    let model = TwoPhotonModel::exchange_target(tc.rc_um, tc.v_down_um_per_us, r2)?.tuned_to_phase(tc.phi_rad, &tc.grid)?;
    let coeffs = model.steady_state(&tc.grid)?;
    let pulse = model.pulse_for_density(tc.n_eff)?;
    let state = twophoton::evolve_two_photon(&model, &pulse, &tc.grid).context(at)?;
    let rho = twophoton::reduce_density_matrix(&state);
    rho.check_invariants().context(at)?;
    let exact_input = SubtractorInput::new(
        PhotonStatistics::Fock { n: 2 },
        coeffs.t_coeff,
        coeffs.r_coeff,
        pulse,
        subtractor::pulse_grid(&pulse, state.times.len().max(2))?,
    )?;
    let exact_rho = subtractor::fock_density_matrix(&exact_input)?;
    Ok(TwoPhotonPoint {
        r2_target: r2,
        r2_lattice: coeffs.reflection(),
        eta: rho.trace(),
        purity: rho.purity()?,
        eta_exact: 1.0 - coeffs.transmission().powi(2),
        purity_exact: subtractor::fock_purity(2, coeffs.t_coeff)?,
        n_eff: state.n_eff,
        ledger: state.ledger,
        rho,
        exact_rho,
    })
}

fn two_photon(cfg: &RunConfig, out: &mut Output) -> CliResult<()> {
    let tc = &cfg.two_photon;
    let sweep = cfg.sweep_or(SweepConfig::new("r2", 0.1, 0.9, 5, Scale::Linear));
    let mut r2s = sweep.values(&["r2"])?;
    let swept = r2s.len();
    r2s.extend(tc.rho_r2.iter().filter(|r| !r2s.contains(r)).collect::<Vec<_>>());
    let points = r2s.par_iter().map(|&r2| two_photon_point(cfg, r2)).collect::<CliResult<Vec<_>>>()?;
    let mut t = Table::new(&["r2_target", "r2_lattice", "eta", "purity", "eta_exact", "purity_exact"]);
    for p in &points[..swept] {
        t.push_numbers([p.r2_target, p.r2_lattice, p.eta, p.purity, p.eta_exact, p.purity_exact]);
    }
    out.csv("two_photon.csv", &t)?;
    for &r2 in &tc.rho_r2 {
        let p = points.iter().find(|p| p.r2_target == r2).expect("every requested |R|^2 was run");
        out.csv(&format!("rho_r2_{}.csv", tag(r2)), &density_table(&p.rho))?;
        out.csv(&format!("rho_abs_r2_{}.csv", tag(r2)), &magnitude_table(&p.rho)?)?;
        out.csv(&format!("rho_abs_exact_r2_{}.csv", tag(r2)), &magnitude_table(&p.exact_rho)?)?;
    }
    let xs: Vec<f64> = points[..swept].iter().map(|p| p.r2_lattice).collect();
    out.plot(
        "two_photon.svg",
        "two-photon subtraction",
        ("|R|^2", "value"),
        &[
            series("eta", &xs, points.iter().map(|p| p.eta)),
            series("purity", &xs, points.iter().map(|p| p.purity)),
            series("1 - |T|^4", &xs, points.iter().map(|p| p.eta_exact)),
            series("closed-form purity", &xs, points.iter().map(|p| p.purity_exact)),
        ],
    )?;
    let results = json!({"n_eff": tc.n_eff, "grid": tc.grid, "points": points});
    envelope(out, Command::TwoPhoton, cfg, None, results)
}

fn repeater(cfg: &RunConfig, out: &mut Output) -> CliResult<()> {
    let rc = cfg.repeater;
    let (coeffs, derived) = match rc.coefficients {
        CoefficientsConfig::Direct { t_abs, t_phase_rad, r_abs, r_phase_rad } => (
            ScatterCoeffs::new(Complex64::from_polar(t_abs, t_phase_rad), Complex64::from_polar(r_abs, r_phase_rad)),
            None,
        ),
        CoefficientsConfig::Medium => {
            let p = cfg.system_params()?;
            let m = medium(cfg, p)?;
            (m.solve_scattering(0.0, p.r_perp).context(|| "medium coefficients".into())?, Some(*m.derived()))
        }
    };
    let report = rydex::repeater::run_protocol(&coeffs, rc.detector_efficiency, rc.phi_rad)?;
    let mut t = Table::new(&["stage", "detectors", "class", "probability", "fidelity"]);
    for (stage, s) in [("elementary", &report.elementary), ("connection", &report.connection)] {
        for p in &s.patterns {
            let dets = p.detectors.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("+");
            let class = serde_json::to_value(p.class).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let fid = p.fidelity.map(crate::output::num).unwrap_or_default();
            t.push(vec![stage.into(), dets, class, crate::output::num(p.probability), fid]);
        }
    }
    out.csv("repeater_patterns.csv", &t)?;
    let results = json!({"coefficients": coeffs, "report": report});
    envelope(out, Command::Repeater, cfg, derived, results)
}

fn feasibility(cfg: &RunConfig, out: &mut Output) -> CliResult<()> {
    let p = cfg.system_params()?;
    let d = p.derive()?;
    let fc = cfg.feasibility;
    let dt = fc.dt_times_gamma / d.eit_bandwidth;
    let f = p.feasibility(mhz_to_angular(fc.gamma_s_mhz), mhz_to_angular(fc.gamma_c_mhz), dt)?;
    let mut t = Table::new(&["spinwave_condition", "control_condition", "geometry_ok", "rayleigh_length_um", "pulse_dt_us"]);
    t.push_numbers([f.cond_spinwave, f.cond_control, f64::from(u8::from(f.cond_geometry)), f.rayleigh_length, dt]);
    out.csv("feasibility.csv", &t)?;
    envelope(out, Command::Feasibility, cfg, Some(d), json!({"pulse_dt_us": dt, "report": f}))
}
