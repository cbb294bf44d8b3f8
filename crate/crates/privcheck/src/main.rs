//! Command-line entry point: parse → elaborate → conditions → oracle →
//! report.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use privcheck::calculus::{build_scenario, honest_trace, Protocol, ScenarioKind};
use privcheck::conditions::{
    build_idealisation, check_conditions, classify_conditionals, validate_idealisation, CondClass,
    Heuristic, Idealisation,
};
use privcheck::emitter::{emit_frame_opacity, emit_well_auth, output_names};
use privcheck::explorer::{privacy_oracle, Bounds, ExploreStats, Property};
use privcheck::frontend::{load_spec, parse_ideal_overrides, ElabOptions};
use privcheck::report::{
    failed_replays, overall_verdict, witness_traces, FoEntry, OracleReport, ProtocolMeta, Report,
    Timings, Verdict, SCHEMA_VERSION,
};
use privcheck::terms::Theory;

#[derive(Parser)]
#[command(
    name = "privcheck",
    about = "Bounded verifier for unlinkability and anonymity of 2-party protocols"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check frame opacity and well-authentication, and print verdicts.
    Check(CheckArgs),
    /// Run the bounded trace-equivalence oracle for the privacy property.
    Oracle(OracleArgs),
    /// Write the two ProVerif encodings next to the spec.
    Emit(EmitArgs),
    /// Print the honest trace and the resulting frame.
    Honest(SpecArgs),
    /// Parse and validate the spec, reporting diagnostics only.
    Parse(SpecArgs),
}

#[derive(Args)]
struct SpecArgs {
    /// Protocol spec (.priv file).
    file: PathBuf,
    /// Treat `total` symbols as ordinary (failing) destructors.
    #[arg(long)]
    faillible_dec: bool,
}

#[derive(Args)]
struct BoundArgs {
    /// Identity unfoldings per replication site.
    #[arg(long, default_value_t = Bounds::default().max_identities)]
    ids: usize,
    /// Session unfoldings per replication site.
    #[arg(long, default_value_t = Bounds::default().max_sessions)]
    sessions: usize,
    /// Recipe depth for attacker inputs and static equivalence.
    #[arg(long, default_value_t = Bounds::default().recipe_depth)]
    depth: usize,
    /// Observable actions per trace.
    #[arg(long, default_value_t = Bounds::default().max_actions)]
    actions: usize,
}

impl BoundArgs {
    fn bounds(&self) -> Bounds {
        Bounds {
            max_identities: self.ids,
            max_sessions: self.sessions,
            recipe_depth: self.depth,
            max_actions: self.actions,
        }
    }
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// Idealisation heuristics to check frame opacity under
    /// (syntactic|semantic|quasi|all; repeatable or comma-separated).
    #[arg(long, value_delimiter = ',', default_values_t = [String::from("quasi")])]
    heuristic: Vec<String>,
    /// Idealisation override file (`label |-> template` lines).
    #[arg(long)]
    ideal: Option<PathBuf>,
    #[command(flatten)]
    bounds: BoundArgs,
    /// Privacy property the verdict speaks about.
    #[arg(long, default_value = "unlinkability")]
    property: String,
    /// Write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Exploration worker budget; 1 is the deterministic reference mode.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Developer flag: re-execute every witness trace and fail if one does
    /// not replay.
    #[arg(long)]
    replay: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// unlinkability | anonymity
    #[arg(long, default_value = "unlinkability")]
    property: String,
    #[command(flatten)]
    bounds: BoundArgs,
    /// Write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct EmitArgs {
    #[command(flatten)]
    spec: SpecArgs,
    /// Idealisation heuristic for the frame-opacity biprocess.
    #[arg(long, default_value = "syntactic")]
    heuristic: String,
    /// Idealisation override file.
    #[arg(long)]
    ideal: Option<PathBuf>,
    /// Emit one correspondence query per prefix depth instead of a single
    /// nested query.
    #[arg(long)]
    split_queries: bool,
    /// Output directory (defaults to the spec's directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}

fn load(spec: &SpecArgs) -> Result<(Theory, Protocol), String> {
    let src = std::fs::read_to_string(&spec.file)
        .map_err(|e| format!("{}: {e}", spec.file.display()))?;
    let name = spec
        .file
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("protocol")
        .to_string();
    load_spec(&name, &src, ElabOptions { faillible_dec: spec.faillible_dec })
        .map_err(|e| format!("{}: {e}", spec.file.display()))
}

fn parse_property(s: &str) -> Result<Property, String> {
    match s {
        "unlinkability" => Ok(Property::Unlinkability),
        "anonymity" => Ok(Property::Anonymity),
        other => Err(format!("unknown property `{other}` (unlinkability|anonymity)")),
    }
}

fn parse_heuristics(args: &[String]) -> Result<Vec<Heuristic>, String> {
    let mut out = Vec::new();
    for a in args {
        if a == "all" {
            for h in Heuristic::ALL {
                if !out.contains(&h) {
                    out.push(h);
                }
            }
        } else {
            let h: Heuristic = a.parse()?;
            if !out.contains(&h) {
                out.push(h);
            }
        }
    }
    Ok(out)
}

fn apply_overrides(
    ideal: &mut Idealisation,
    p: &Protocol,
    th: &Theory,
    path: &Path,
) -> Result<(), String> {
    let src = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let overrides = parse_ideal_overrides(&src, th).map_err(|e| format!("{}: {e}", path.display()))?;
    for (label, tpl) in overrides {
        ideal.override_label(&label, tpl).map_err(|e| e.to_string())?;
    }
    validate_idealisation(p, ideal, th).map_err(|e| e.to_string())
}

fn merge_stats(into: &mut ExploreStats, s: &ExploreStats) {
    into.nodes += s.nodes;
    into.pruned += s.pruned;
    into.maximal += s.maximal;
    into.bound_hit |= s.bound_hit;
}

/// Run the conditions checks, splitting the frame-opacity heuristics and
/// well-authentication across up to `jobs` threads; a single job shares one
/// exploration pass (the deterministic reference mode).
fn run_conditions(
    p: &Protocol,
    ideals: &[(Heuristic, Idealisation)],
    classes: &[CondClass],
    b: &Bounds,
    th: &Theory,
    jobs: usize,
) -> (Vec<FoEntry>, privcheck::conditions::WaReport, ExploreStats) {
    if jobs <= 1 {
        let refs: Vec<&Idealisation> = ideals.iter().map(|(_, i)| i).collect();
        let r = check_conditions(p, &refs, classes, b, th);
        let fo = ideals
            .iter()
            .zip(r.frame_opacity)
            .map(|((h, _), verdict)| FoEntry { heuristic: h.to_string(), verdict })
            .collect();
        return (fo, r.wa, r.stats);
    }
    // One task per heuristic plus one for well-authentication; results are
    // reassembled in order, so the report does not depend on scheduling.
    let mut fo_slots: Vec<Option<FoEntry>> = ideals.iter().map(|_| None).collect();
    let mut wa_slot = None;
    let mut stats = ExploreStats::default();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (h, ideal) in ideals {
            handles.push((
                Some(h),
                scope.spawn(move || check_conditions(p, &[ideal], &[], b, th)),
            ));
        }
        handles.push((None, scope.spawn(move || check_conditions(p, &[], classes, b, th))));
        for (slot, (h, handle)) in handles.into_iter().enumerate() {
            let r = handle.join().expect("worker panicked");
            merge_stats(&mut stats, &r.stats);
            match h {
                Some(h) => {
                    fo_slots[slot] = Some(FoEntry {
                        heuristic: h.to_string(),
                        verdict: r.frame_opacity.into_iter().next().expect("one verdict"),
                    })
                }
                None => wa_slot = Some(r.wa),
            }
        }
    });
    (
        fo_slots.into_iter().map(|s| s.expect("every slot filled")).collect(),
        wa_slot.expect("well-authentication ran"),
        stats,
    )
}

fn write_json(path: &Path, report: &Report) -> Result<(), String> {
    std::fs::write(path, report.to_json()).map_err(|e| format!("{}: {e}", path.display()))
}

fn exit_for(verdict: Verdict) -> ExitCode {
    match verdict {
        Verdict::Safe => ExitCode::SUCCESS,
        Verdict::Violated | Verdict::Inconclusive => ExitCode::from(1),
    }
}

fn cmd_check(args: CheckArgs) -> Result<ExitCode, String> {
    let t0 = Instant::now();
    let (th, p) = load(&args.spec)?;
    let b = args.bounds.bounds();
    let heuristics = parse_heuristics(&args.heuristic)?;
    parse_property(&args.property)?;

    let t_classify = Instant::now();
    let classes = classify_conditionals(&p, &th, b.recipe_depth);
    let classify_ms = t_classify.elapsed().as_millis() as u64;

    let mut ideals = Vec::new();
    for h in &heuristics {
        let mut ideal = build_idealisation(&p, *h, &th).map_err(|e| e.to_string())?;
        if let Some(path) = &args.ideal {
            apply_overrides(&mut ideal, &p, &th, path)?;
        }
        ideals.push((*h, ideal));
    }

    let t_cond = Instant::now();
    let (fo, wa, stats) = run_conditions(&p, &ideals, &classes, &b, &th, args.jobs);
    let conditions_ms = t_cond.elapsed().as_millis() as u64;

    let verdict = overall_verdict(&fo, Some(&wa), None);
    let report = Report {
        schema: SCHEMA_VERSION,
        protocol: ProtocolMeta::of(&p),
        bounds: b,
        property: args.property.clone(),
        conditionals: classes,
        frame_opacity: fo,
        well_authentication: Some(wa),
        oracle: None,
        stats,
        timings: Timings {
            classify_ms,
            conditions_ms,
            oracle_ms: 0,
            total_ms: t0.elapsed().as_millis() as u64,
        },
        verdict,
    };

    print_check_report(&report);
    if let Some(path) = &args.json {
        write_json(path, &report)?;
    }
    if args.replay {
        let scenario = build_scenario(&p, ScenarioKind::Anon);
        let failed = failed_replays(witness_traces(&report), &scenario, &th, &b);
        if failed.is_empty() {
            println!("replay: every witness trace replays");
        } else {
            return Err(format!("replay: {} witness trace(s) failed to replay", failed.len()));
        }
    }
    Ok(exit_for(report.verdict))
}

fn print_check_report(r: &Report) {
    println!(
        "protocol {} ({}, {}/{}): {} conditionals, {} unsafe",
        r.protocol.name,
        if r.protocol.shared { "shared" } else { "non-shared" },
        r.protocol.rep_i,
        r.protocol.rep_r,
        r.conditionals.len(),
        r.conditionals.iter().filter(|c| !c.is_safe()).count(),
    );
    for f in &r.frame_opacity {
        println!("frame opacity [{}]: {}", f.heuristic, fo_str(&f.verdict));
    }
    if let Some(w) = &r.well_authentication {
        for (cond_id, v) in &w.per_cond {
            println!("well-authentication (i) conditional {}: {}", cond_id, wa_str(v));
        }
        println!("well-authentication (ii): {}", wa_str(&w.wa_ii));
    }
    println!(
        "explored {} nodes ({} pruned){}",
        r.stats.nodes,
        r.stats.pruned,
        if r.stats.bound_hit { ", action bound hit" } else { "" }
    );
    println!("verdict: {}", r.verdict);
}

fn fo_str(v: &privcheck::conditions::FrameOpacityVerdict) -> String {
    use privcheck::conditions::FrameOpacityVerdict as F;
    match v {
        F::HoldsAtBound => "holds at bound".into(),
        F::Violated { trace, .. } => format!("violated (witness trace of {} actions)", trace.len()),
        F::Undefined { label, .. } => format!("undefined (idealisation fails on {label})"),
    }
}

fn wa_str(v: &privcheck::conditions::WaVerdict) -> String {
    use privcheck::conditions::WaVerdict as W;
    match v {
        W::HoldsAtBound => "holds at bound".into(),
        W::Violated(viol) => format!(
            "violated by agent {:?} (witness trace of {} actions)",
            viol.agent,
            viol.trace.len()
        ),
        W::NotApplicable => "not applicable".into(),
    }
}

fn cmd_oracle(args: OracleArgs) -> Result<ExitCode, String> {
    let t0 = Instant::now();
    let (th, p) = load(&args.spec)?;
    let b = args.bounds.bounds();
    let property = parse_property(&args.property)?;
    let (forward, backward) = privacy_oracle(&p, property, &b, &th);
    let oracle = OracleReport { property: args.property.clone(), forward, backward };
    let holds = oracle.holds();
    println!(
        "oracle [{}]: forward {}, backward {}",
        args.property,
        if oracle.forward.holds() { "holds at bound" } else { "violated" },
        if oracle.backward.holds() { "holds at bound" } else { "violated" },
    );
    let verdict = if holds { Verdict::Safe } else { Verdict::Violated };
    if let Some(path) = &args.json {
        let report = Report {
            schema: SCHEMA_VERSION,
            protocol: ProtocolMeta::of(&p),
            bounds: b,
            property: args.property.clone(),
            conditionals: Vec::new(),
            frame_opacity: Vec::new(),
            well_authentication: None,
            oracle: Some(oracle),
            stats: ExploreStats::default(),
            timings: Timings {
                classify_ms: 0,
                conditions_ms: 0,
                oracle_ms: t0.elapsed().as_millis() as u64,
                total_ms: t0.elapsed().as_millis() as u64,
            },
            verdict,
        };
        write_json(path, &report)?;
    }
    Ok(if holds { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_emit(args: EmitArgs) -> Result<ExitCode, String> {
    let (th, p) = load(&args.spec)?;
    let h: Heuristic = args.heuristic.parse()?;
    let mut ideal = build_idealisation(&p, h, &th).map_err(|e| e.to_string())?;
    if let Some(path) = &args.ideal {
        apply_overrides(&mut ideal, &p, &th, path)?;
    }
    let classes = classify_conditionals(&p, &th, Bounds::default().recipe_depth);
    let fo = emit_frame_opacity(&p, &ideal, &th).map_err(|e| e.to_string())?;
    let wa = emit_well_auth(&p, &th, &classes, args.split_queries).map_err(|e| e.to_string())?;
    let dir = match &args.out_dir {
        Some(d) => d.clone(),
        None => args.spec.file.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    std::fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let (fo_name, wa_name) = output_names(&p.name);
    for (name, doc) in [(fo_name, fo), (wa_name, wa)] {
        let path = dir.join(&name);
        std::fs::write(&path, &doc.text).map_err(|e| format!("{}: {e}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_honest(args: SpecArgs) -> Result<ExitCode, String> {
    let (th, p) = load(&args)?;
    let (trace, frame) = honest_trace(&p, &th).map_err(|e| e.to_string())?;
    for a in trace.iter().filter(|a| a.is_observable()) {
        println!("{a}");
    }
    println!("frame:");
    for (handle, msg) in &frame.bindings {
        let label = frame.label_of.get(handle).map(String::as_str).unwrap_or("-");
        println!("  {handle} = {msg}    [{label}]");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_parse(args: SpecArgs) -> Result<ExitCode, String> {
    let (th, p) = load(&args)?;
    println!(
        "ok: {} ({} symbols, {} conditionals, {})",
        p.name,
        th.symbols.len(),
        p.conds.len(),
        if p.shared { "shared" } else { "non-shared" }
    );
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.cmd {
        Cmd::Check(a) => cmd_check(a),
        Cmd::Oracle(a) => cmd_oracle(a),
        Cmd::Emit(a) => cmd_emit(a),
        Cmd::Honest(a) => cmd_honest(a),
        Cmd::Parse(a) => cmd_parse(a),
    }
}
