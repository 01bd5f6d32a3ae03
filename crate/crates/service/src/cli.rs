//! `cvsa` command line.
//!
//! Exit codes: 0 on success, 1 for validation failures and usage errors,
//! 2 for I/O and storage failures.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use cvsa_core::cvs::default_checklist;
use cvsa_core::export::{encode_mask, validate_archive, ExportOptions};
use cvsa_core::identity::{Annotator, Role};
use cvsa_core::ingestion::{ExclusionFlag, FfmpegDecoder, FrameDecoder, FrameDirectory, Fps, NoDecoder};
use cvsa_core::qa::{AgreementScope, BatchKind, BatchRequest, KappaCriterion};
use cvsa_core::sampling::Roi;
use cvsa_core::segmentation::{PolygonAnnotation, Submission, Verdict};
use cvsa_core::store::RedbStore;
use cvsa_core::{AnnotatorId, Error, ErrorKind, FrameId, Platform, ProjectId, Target, VideoId};
use serde::Serialize;

use crate::{ServeConfig, TokenTable};

#[derive(Debug, Parser)]
#[command(name = "cvsa", version, about = "CVS annotation platform")]
pub struct Cli {
    /// Store file.
    #[arg(long, global = true, env = "CVSA_STORE", default_value = "cvsa.redb")]
    pub store: PathBuf,

    /// Annotator the command acts as.
    #[arg(long = "as", global = true, env = "CVSA_ACTOR", default_value = "admin")]
    pub actor: AnnotatorId,

    /// Directory of pre-extracted frames, `<video_id>/<ms:09>.png`.
    #[arg(long, global = true, env = "CVSA_FRAMES_DIR")]
    pub frames_dir: Option<PathBuf>,

    /// ffmpeg executable used to decode frames when no frames directory is given.
    #[arg(long, global = true, env = "CVSA_FFMPEG")]
    pub ffmpeg: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create the first administrator in an empty store.
    Init {
        #[arg(long)]
        admin: AnnotatorId,
        #[arg(long, default_value = "Administrator")]
        name: String,
    },
    #[command(subcommand)]
    Annotator(AnnotatorCmd),
    #[command(subcommand)]
    Project(ProjectCmd),
    /// Register a procedure video.
    Ingest {
        #[arg(long, default_value = "default")]
        project: ProjectId,
        #[arg(long)]
        source: String,
        #[arg(long)]
        duration_ms: u64,
        #[arg(long)]
        fps: Fps,
    },
    /// Record exclusion flags (empty list keeps the video).
    Screen {
        #[arg(long)]
        video: VideoId,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        flags: Vec<ExclusionFlag>,
        #[arg(long)]
        expected_version: Option<u64>,
    },
    #[command(subcommand)]
    Roi(RoiCmd),
    /// Plan keyframes, or delete the plan with --delete.
    Sample {
        #[arg(long)]
        video: VideoId,
        /// Defaults to the project's interval (30000 ms unless configured).
        #[arg(long)]
        interval_ms: Option<u64>,
        #[arg(long, conflicts_with = "interval_ms")]
        delete: bool,
    },
    /// Decode every manual keyframe of a plan.
    Materialize {
        #[arg(long)]
        video: VideoId,
    },
    #[command(subcommand)]
    Cvs(CvsCmd),
    #[command(subcommand)]
    Seg(SegCmd),
    #[command(subcommand)]
    Qa(QaCmd),
    /// Export readiness per frame.
    Gate {
        #[arg(long, default_value = "default")]
        project: ProjectId,
    },
    Export {
        #[arg(long, default_value = "default")]
        project: ProjectId,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        partial: bool,
        #[arg(long)]
        materialize_frames: bool,
    },
    /// Check an exported archive; exits 1 on any violation.
    Validate {
        #[arg(long)]
        archive: PathBuf,
    },
    /// Run the HTTP API.
    Serve(ServeArgs),
    /// Print the mutation log.
    Audit {
        #[arg(long)]
        collection: Option<String>,
        #[arg(long)]
        key: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum AnnotatorCmd {
    Add {
        #[arg(long)]
        id: AnnotatorId,
        #[arg(long)]
        name: Option<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        roles: Vec<Role>,
    },
    List,
}

#[derive(Debug, Subcommand)]
pub enum ProjectCmd {
    Create {
        #[arg(long, default_value = "default")]
        id: ProjectId,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        interval_ms: Option<u64>,
    },
    List,
}

#[derive(Debug, Subcommand)]
pub enum RoiCmd {
    Set {
        #[arg(long)]
        video: VideoId,
        #[arg(long)]
        start_ms: u64,
        #[arg(long)]
        end_ms: u64,
        #[arg(long)]
        evaluable_ms: Option<u64>,
        #[arg(long)]
        expected_version: Option<u64>,
    },
    Show {
        #[arg(long)]
        video: VideoId,
    },
}

#[derive(Debug, Subcommand)]
pub enum CvsCmd {
    /// Assign raters to a target (`video:<id>` or `frame:<id>`).
    Assign {
        #[arg(long)]
        target: Target,
        #[arg(long, value_delimiter = ',', required = true)]
        raters: Vec<AnnotatorId>,
    },
    Submit {
        #[arg(long)]
        target: Target,
        #[arg(long, action = clap::ArgAction::Set)]
        c1: bool,
        #[arg(long, action = clap::ArgAction::Set)]
        c2: bool,
        #[arg(long, action = clap::ArgAction::Set)]
        c3: bool,
        #[arg(long)]
        expected_version: Option<u64>,
    },
    Consensus {
        #[arg(long)]
        target: Target,
    },
    /// Pending and submitted work of the acting rater.
    Queue,
    Checklist,
}

#[derive(Debug, Subcommand)]
pub enum SegCmd {
    /// Submit polygons read from a JSON file (a list of polygons or a
    /// submission object).
    Submit {
        #[arg(long)]
        frame: FrameId,
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        draft: bool,
        #[arg(long)]
        expected_version: Option<u64>,
    },
    Review {
        #[arg(long)]
        record: String,
        #[arg(long)]
        verdict: Verdict,
        #[arg(long)]
        notes: Option<String>,
        #[arg(long)]
        expected_version: Option<u64>,
    },
    Lint {
        #[arg(long)]
        record: String,
    },
    /// Write the frame's class-index mask as an indexed PNG.
    Rasterize {
        #[arg(long)]
        frame: FrameId,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Scope {
    Project,
    Video,
}

#[derive(Debug, Subcommand)]
pub enum QaCmd {
    Kappa {
        #[arg(long, value_enum, default_value = "project")]
        scope: Scope,
        /// Project or video id; defaults to the only project in the store.
        #[arg(long)]
        id: Option<String>,
        #[arg(long, default_value = "cvs")]
        criterion: KappaCriterion,
        #[arg(long)]
        json: bool,
    },
    Batch {
        #[arg(long, value_enum, default_value = "assessments")]
        kind: KindArg,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        project: Option<ProjectId>,
        #[arg(long)]
        video: Option<VideoId>,
        #[arg(long)]
        date: Option<NaiveDate>,
    },
    /// Sequential per-procedure review queue.
    Queue {
        #[arg(long)]
        video: VideoId,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Assessments,
    Segmentations,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CVSA_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    /// JSON object mapping bearer token to annotator id.
    #[arg(long, env = "CVSA_TOKENS_FILE")]
    pub tokens: PathBuf,
    #[arg(long, env = "CVSA_EXPORT_DIR", default_value = "exports")]
    pub export_dir: PathBuf,
}

/// What a command prints on success.
enum Output {
    Json(serde_json::Value),
    Text(String),
    Nothing,
}

fn json<T: Serialize>(value: &T) -> Output {
    Output::Json(serde_json::to_value(value).expect("CLI output serializes"))
}

/// Failure of a command: the platform error plus anything worth printing.
struct Failure {
    error: Error,
    report: Option<String>,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure { error, report: None }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Io => 2,
        _ => 1,
    }
}

fn decoder(cli: &Cli) -> Arc<dyn FrameDecoder> {
    match (&cli.frames_dir, &cli.ffmpeg) {
        (Some(dir), _) => Arc::new(FrameDirectory::new(dir)),
        (None, Some(bin)) => Arc::new(FfmpegDecoder::new(bin)),
        (None, None) => Arc::new(NoDecoder),
    }
}

pub fn open_platform(cli: &Cli) -> cvsa_core::Result<Platform> {
    let store = RedbStore::open(&cli.store)?;
    Ok(Platform::new(Arc::new(store), decoder(cli)))
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(Output::Json(v)) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            0
        }
        Ok(Output::Text(t)) => {
            print!("{t}");
            0
        }
        Ok(Output::Nothing) => 0,
        Err(f) => {
            if let Some(report) = &f.report {
                println!("{report}");
            }
            eprintln!("error: {}", f.error);
            exit_code(&f.error)
        }
    }
}

fn execute(cli: &Cli) -> Result<Output, Failure> {
    if let Command::Validate { archive } = &cli.command {
        return validate(archive);
    }
    let p = open_platform(cli)?;
    let me = &cli.actor;
    let out = match &cli.command {
        Command::Init { admin, name } => json(&p.bootstrap_admin(admin.clone(), name)?),
        Command::Annotator(AnnotatorCmd::Add { id, name, roles }) => json(&p.upsert_annotator(
            me,
            Annotator {
                annotator_id: id.clone(),
                display_name: name.clone().unwrap_or_else(|| id.to_string()),
                roles: roles.iter().copied().collect(),
            },
        )?),
        Command::Annotator(AnnotatorCmd::List) => json(&p.annotators()?),
        Command::Project(ProjectCmd::Create { id, name, interval_ms }) => json(&p.create_project(
            me,
            id.clone(),
            name.as_deref().unwrap_or(id.as_str()),
            *interval_ms,
        )?),
        Command::Project(ProjectCmd::List) => json(&p.projects()?),
        Command::Ingest {
            project,
            source,
            duration_ms,
            fps,
        } => json(&p.register_video(me, project, source, *duration_ms, *fps)?),
        Command::Screen {
            video,
            flags,
            expected_version,
        } => {
            let flags: BTreeSet<ExclusionFlag> = flags.iter().copied().collect();
            json(&p.screen_video(me, video, flags, *expected_version)?)
        }
        Command::Roi(RoiCmd::Set {
            video,
            start_ms,
            end_ms,
            evaluable_ms,
            expected_version,
        }) => {
            let roi = Roi::new(*start_ms, *end_ms, *evaluable_ms)?;
            json(&p.set_roi(me, video, roi, *expected_version)?)
        }
        Command::Roi(RoiCmd::Show { video }) => {
            let v = p.roi(video)?;
            json(&serde_json::json!({ "version": v.version, "record": v.record }))
        }
        Command::Sample {
            video,
            interval_ms,
            delete,
        } => {
            if *delete {
                p.delete_plan(me, video)?;
                Output::Text(format!("deleted plan for {video}\n"))
            } else {
                let interval = match interval_ms {
                    Some(i) => *i,
                    None => p.project(&p.video(video)?.record.project_id)?.interval_ms,
                };
                json(&p.sample_keyframes(me, video, interval)?)
            }
        }
        Command::Materialize { video } => json(&p.materialize_plan(me, video)?),
        Command::Cvs(cmd) => cvs(&p, me, cmd)?,
        Command::Seg(cmd) => seg(&p, me, cmd)?,
        Command::Qa(cmd) => qa(&p, me, cmd)?,
        Command::Gate { project } => json(&p.check_export_gate(project)?),
        Command::Export {
            project,
            out,
            partial,
            materialize_frames,
        } => export(&p, me, project, out, *partial, *materialize_frames)?,
        Command::Validate { .. } => unreachable!("handled before opening the store"),
        Command::Serve(args) => serve(p, args)?,
        Command::Audit { collection, key } => json(&p.audit_log(collection.as_deref(), key.as_deref())?),
    };
    Ok(out)
}

fn cvs(p: &Platform, me: &AnnotatorId, cmd: &CvsCmd) -> cvsa_core::Result<Output> {
    Ok(match cmd {
        CvsCmd::Assign { target, raters } => json(&p.assign_raters(me, target, raters)?),
        CvsCmd::Submit {
            target,
            c1,
            c2,
            c3,
            expected_version,
        } => json(&p.submit_assessment(me, target, [*c1, *c2, *c3], *expected_version)?),
        CvsCmd::Consensus { target } => match target {
            Target::Frame(f) => json(&p.frame_label(f)?),
            Target::Video(_) => json(&p.compute_consensus(target)?),
        },
        CvsCmd::Queue => json(&p.work_queue(me)?),
        CvsCmd::Checklist => json(&default_checklist()),
    })
}

fn read_submission(path: &Path) -> cvsa_core::Result<Submission> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let parsed = if value.is_array() {
        serde_json::from_value::<Vec<PolygonAnnotation>>(value).map(|polygons| Submission {
            polygons,
            image_width: None,
            image_height: None,
        })
    } else {
        serde_json::from_value::<Submission>(value)
    };
    parsed.map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

fn seg(p: &Platform, me: &AnnotatorId, cmd: &SegCmd) -> cvsa_core::Result<Output> {
    Ok(match cmd {
        SegCmd::Submit {
            frame,
            file,
            draft,
            expected_version,
        } => {
            let submission = read_submission(file)?;
            if *draft {
                json(&p.save_segmentation_draft(me, frame, submission, *expected_version)?)
            } else {
                json(&p.submit_segmentation(me, frame, submission, *expected_version)?)
            }
        }
        SegCmd::Review {
            record,
            verdict,
            notes,
            expected_version,
        } => json(&p.review_segmentation(me, record, *verdict, notes.clone(), *expected_version)?),
        SegCmd::Lint { record } => json(&p.lint_segmentation(record)?),
        SegCmd::Rasterize { frame, out } => {
            let mask = p.segmentation_mask(frame)?;
            std::fs::write(out, encode_mask(&mask))?;
            let histogram = mask.histogram();
            json(&serde_json::json!({
                "frame_id": frame,
                "out": out,
                "width": mask.width,
                "height": mask.height,
                "histogram": histogram,
            }))
        }
    })
}

fn only_project(p: &Platform) -> cvsa_core::Result<ProjectId> {
    let projects = p.projects()?;
    match projects.as_slice() {
        [one] => Ok(one.project_id.clone()),
        [] => Err(Error::Invalid("the store has no project".into())),
        _ => Err(Error::Invalid("several projects exist; pass --id".into())),
    }
}

fn qa(p: &Platform, me: &AnnotatorId, cmd: &QaCmd) -> cvsa_core::Result<Output> {
    Ok(match cmd {
        QaCmd::Kappa {
            scope,
            id,
            criterion,
            json: as_json,
        } => {
            let scope = match (scope, id) {
                (Scope::Project, Some(id)) => AgreementScope::Project(id.parse()?),
                (Scope::Project, None) => AgreementScope::Project(only_project(p)?),
                (Scope::Video, Some(id)) => AgreementScope::Video(id.parse()?),
                (Scope::Video, None) => return Err(Error::Invalid("--scope video needs --id".into())),
            };
            let report = p.agreement_report(scope, *criterion)?;
            if *as_json {
                json(&report)
            } else {
                Output::Text(format!("criterion {}\n{}", criterion_name(*criterion), report.to_table()))
            }
        }
        QaCmd::Batch {
            kind,
            size,
            seed,
            project,
            video,
            date,
        } => {
            let request = BatchRequest {
                kind: match kind {
                    KindArg::Assessments => BatchKind::Assessments,
                    KindArg::Segmentations => BatchKind::Segmentations,
                },
                project_id: project.clone(),
                video_id: video.clone(),
                size: *size,
                seed: *seed,
                created_for: *date,
            };
            json(&p.create_review_batch(me, &request)?)
        }
        QaCmd::Queue { video } => json(&p.sequential_review_queue(video, me)?),
    })
}

fn criterion_name(c: KappaCriterion) -> &'static str {
    match c {
        KappaCriterion::C1 => "c1",
        KappaCriterion::C2 => "c2",
        KappaCriterion::C3 => "c3",
        KappaCriterion::Cvs => "cvs",
    }
}

fn export(
    p: &Platform,
    me: &AnnotatorId,
    project: &ProjectId,
    out: &Path,
    partial: bool,
    materialize_frames: bool,
) -> Result<Output, Failure> {
    let options = ExportOptions {
        partial,
        materialize_frames,
    };
    match p.export_dataset(me, project, out, options) {
        Ok(m) => Ok(json(&serde_json::json!({
            "out": out,
            "export_checksum": m.export_checksum,
            "frames": m.frames.len(),
            "omitted": m.omitted.len(),
        }))),
        Err(Error::GateBlocked(gate)) => {
            let mut report = format!("{} frames block the export:\n", gate.blocking.len());
            for b in &gate.blocking {
                report.push_str(&format!("  {}: {}\n", b.frame_id, b.reasons.join("; ")));
            }
            Err(Failure {
                error: Error::GateBlocked(gate),
                report: Some(report),
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn validate(archive: &Path) -> Result<Output, Failure> {
    let violations = validate_archive(archive)?;
    if violations.is_empty() {
        return Ok(Output::Text(format!("{}: ok\n", archive.display())));
    }
    let mut report = String::new();
    for v in &violations {
        report.push_str(&format!("{:?} {}: {}\n", v.code, v.subject, v.message));
    }
    Err(Failure {
        error: Error::Invalid(format!("{} violations", violations.len())),
        report: Some(report),
    })
}

fn serve(platform: Platform, args: &ServeArgs) -> cvsa_core::Result<Output> {
    let tokens = TokenTable::load(&args.tokens)?;
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .try_init();
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(crate::serve(
        platform,
        ServeConfig {
            addr: SocketAddr::new(args.bind, args.port),
            tokens,
            export_root: args.export_dir.clone(),
        },
    ))?;
    Ok(Output::Nothing)
}
