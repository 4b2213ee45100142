use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use apvlm_core::experiment::{episode_file_stem, run_on_scenes, ExperimentConfig, ExperimentError};
use apvlm_core::exploration::{replay_log, to_jsonl, LOG_FORMAT};
use apvlm_core::geom::{Pose, Vec3};
use apvlm_core::grid::project_grid;
use apvlm_core::metrics::{emit_report, ReportFormat, ReportRow};
use apvlm_core::render::{encode_png, render};
use apvlm_core::scene::{default_scenes, estimate_grid, narrow_cone_scene, observe, tilted_top_down, SceneSpec};
use apvlm_core::vlmclient::{replay_transcript, template_hash, TRANSCRIPT_FORMAT};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SCENE: u8 = 3;
const EXIT_UNAVAILABLE: u8 = 4;
const EXIT_CORRUPT_LOG: u8 = 5;

#[derive(Parser)]
#[command(name = "apvlm", version, about = "Grid-prompted active perception simulator and evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write episode logs, metrics and reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a scene from a pose with the grid overlay (PNG plus SVG overlay).
    Render {
        #[arg(long)]
        scene: PathBuf,
        /// "x,y,z,rx,ry": position in meters, rotations about base x and y in degrees.
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print an episode log (or a remote-agent transcript) and re-verify it.
    Replay { log: PathBuf },
    /// Re-emit a report from a metrics.json written by `run`.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
    },
    /// Write the default scenes and an example experiment config.
    Init {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct ResultsFile {
    rows: Vec<ReportRow>,
    episodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    template_hash: Option<String>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_FAILURE, format!("{}: {e}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| io_failure(path, e))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => cmd_run(&config, &out),
        Command::Render { scene, pose, out } => cmd_render(&scene, &pose, &out),
        Command::Replay { log } => cmd_replay(&log),
        Command::Report { results, format } => cmd_report(&results, format),
        Command::Init { out } => cmd_init(&out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_run(config: &Path, out: &Path) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    let scenes = cfg.load_scenes().map_err(|e| Failure::new(EXIT_SCENE, e.to_string()))?;
    let output = run_on_scenes(&cfg, &scenes).map_err(|e| match e {
        ExperimentError::Unavailable(_) => Failure::new(EXIT_UNAVAILABLE, e.to_string()),
        ExperimentError::Scene(_) => Failure::new(EXIT_SCENE, e.to_string()),
        other => Failure::new(EXIT_CONFIG, other.to_string()),
    })?;

    let episodes_dir = out.join("episodes");
    create_dir(&episodes_dir)?;
    let mut with_transcripts = false;
    for cell in &output.cells {
        for trial in &cell.trials {
            let stem = episode_file_stem(&cell.row.scene, &cell.row.method, trial.index);
            write(&episodes_dir.join(format!("{stem}.jsonl")), to_jsonl(&trial.outcome.episode))?;
            if let Some(t) = &trial.transcript {
                let dir = out.join("transcripts");
                if !with_transcripts {
                    create_dir(&dir)?;
                    with_transcripts = true;
                }
                write(&dir.join(format!("{stem}.jsonl")), t)?;
            }
        }
    }
    let rows = output.rows();
    let results = ResultsFile {
        rows: rows.clone(),
        episodes: output.episode_count(),
        template_hash: cfg.uses_vlm().then(template_hash),
    };
    let json = serde_json::to_string_pretty(&results).expect("results serialize");
    write(&out.join("metrics.json"), json + "\n")?;
    let markdown = emit_report(&rows, ReportFormat::Markdown);
    write(&out.join("report.md"), &markdown)?;
    write(&out.join("report.csv"), emit_report(&rows, ReportFormat::Csv))?;
    print!("{markdown}");
    eprintln!("{} episodes written to {}", results.episodes, episodes_dir.display());
    Ok(())
}

fn parse_pose(text: &str) -> Result<Pose, String> {
    let values: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
        .collect::<Result<_, _>>()?;
    let [x, y, z, rx, ry] = values[..] else {
        return Err(format!("expected 5 comma-separated values x,y,z,rx,ry, got {}", values.len()));
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err("pose values must be finite".into());
    }
    Pose::new(Vec3::new(x, y, z), tilted_top_down(rx, ry)).map_err(|e| e.to_string())
}

fn cmd_render(scene_path: &Path, pose: &str, out: &Path) -> Result<(), Failure> {
    let pose = parse_pose(pose).map_err(|e| Failure::new(EXIT_CONFIG, format!("invalid pose: {e}")))?;
    let scene = SceneSpec::load(scene_path).map_err(|e| Failure::new(EXIT_SCENE, e.to_string()))?;
    let k = scene.camera;
    let facts = observe(&scene, &pose, &k);
    let grid = estimate_grid(&scene, &scene.grid, &pose, &facts.detected_markers);
    let overlay = project_grid(&grid, &k, &pose);
    let image = render(&scene, &pose, &k, &overlay);
    write(out, encode_png(&image))?;
    let svg = out.with_extension("svg");
    write(&svg, overlay.to_svg())?;
    println!(
        "{}: {} segments, {} labels; {}",
        out.display(),
        overlay.segments.len(),
        overlay.labels.len(),
        facts.summary()
    );
    Ok(())
}

fn cmd_replay(path: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    if text.lines().next().is_some_and(|l| l.contains(TRANSCRIPT_FORMAT)) {
        let (header, n) = replay_transcript(&text).map_err(|e| Failure::new(EXIT_CORRUPT_LOG, e.to_string()))?;
        println!(
            "transcript for {} ({}, templates {}): {n} exchanges re-parsed identically",
            header.episode, header.model, header.template_hash
        );
        return Ok(());
    }
    let replay = replay_log(&text).map_err(|e| Failure::new(EXIT_CORRUPT_LOG, format!("corrupt {LOG_FORMAT} log: {e}")))?;
    for line in replay.narrative() {
        println!("{line}");
    }
    if replay.truncated {
        eprintln!("warning: {} ends before its result record; the run was interrupted", path.display());
    }
    Ok(())
}

fn cmd_report(results: &Path, format: ReportFormat) -> Result<(), Failure> {
    let text = fs::read_to_string(results).map_err(|e| io_failure(results, e))?;
    let file: ResultsFile = serde_json::from_str(&text).map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", results.display())))?;
    print!("{}", emit_report(&file.rows, format));
    Ok(())
}

fn cmd_init(out: &Path) -> Result<(), Failure> {
    let scenes_dir = out.join("scenes");
    create_dir(&scenes_dir)?;
    let mut paths = Vec::new();
    for scene in default_scenes() {
        let name = format!("{}.json", scene.id);
        write(&scenes_dir.join(&name), scene.to_json() + "\n")?;
        paths.push(format!("scenes/{name}"));
    }
    let narrow = narrow_cone_scene();
    write(&scenes_dir.join(format!("{}.json", narrow.id)), narrow.to_json() + "\n")?;
    let cfg = serde_json::json!({
        "scenes": paths,
        "action_spaces": ["NAP", "2DA", "2DNA", "3DD", "3DC", "3Dx", "3DxN", "3Dxy"],
        "trials_per_cell": 10,
        "base_seed": 0,
        "analyzer": "oracle",
        "policy": "greedy",
        "osr_margin": 0.1,
        "episode": {"max_iterations": 10, "confidence_threshold": 0.8, "marker_noise_std": 0.0}
    });
    write(&out.join("experiment.json"), serde_json::to_string_pretty(&cfg).expect("json") + "\n")?;
    println!("wrote {}", out.display());
    Ok(())
}
