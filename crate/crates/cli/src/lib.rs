//! The `qmap` command surface: one subcommand per pipeline stage.
//!
//! Every stage writes `config.kv`, `summary.jsonl` and `run.log` under
//! `<out>/<stage>/`. Model checkpoints live in `<out>/models`, the synthetic
//! dataset in `<out>/data` and map labels in `$QMAP_CACHE` or `<out>/cache`.

pub mod args;
pub mod commands;
pub mod settings;
pub mod stage;

use anyhow::Result;

use crate::args::{Cli, Command};
use crate::settings::Settings;

/// Human-readable plan of what `cmd` would read and write.
pub fn plan(cmd: &Command, s: &Settings) -> Vec<String> {
    let mut out = vec![format!("stage dir: {}", s.out.join(cmd.stage()).display())];
    let manifest = format!("manifest: {}", s.manifest.display());
    let cache = format!("label store: {}", s.cache.display());
    match cmd {
        Command::Map { dist, reference } => {
            out.push(format!("compare {} against {}", dist.display(), reference.display()));
            out.push(format!("methods: {:?}", s.methods));
        }
        Command::Synth => {
            out.push(format!("{} bases of {} px, kinds {:?}, levels {:?}", s.synth.base_count, s.synth.base_size, s.synth.kinds, s.synth.levels));
            out.push(manifest);
        }
        Command::Labels => {
            out.extend([manifest, cache, format!("methods: {:?}", s.methods)]);
        }
        Command::TrainGen => {
            out.extend([manifest, cache]);
            for &m in &s.methods {
                out.push(format!("write {}", s.generator_path(m).display()));
            }
        }
        Command::TrainPool => {
            out.extend([manifest, format!("source {} with {} fusion", s.pool_source.token(), s.fusion.mode)]);
            out.push(format!("write {}", s.pooler_path().display()));
        }
        Command::Predict { image } => out.push(format!("score {}", image.display())),
        Command::Eval => out.extend([manifest, format!("read {}", s.pooler_path().display())]),
        Command::Study => out.extend([manifest, cache, format!("blocks {:?}", s.study_blocks)]),
    }
    out
}

pub fn run(cli: &Cli) -> Result<()> {
    let settings = Settings::resolve(cli.global.config.as_deref(), &cli.global.overrides(), cli.global.out_dir())?;
    if cli.global.dry_run {
        print!("{}", settings.resolved());
        for line in plan(&cli.command, &settings) {
            println!("plan: {line}");
        }
        return Ok(());
    }
    qmap_nn::par::with_workers(settings.workers, || dispatch(&cli.command, &settings))
}

fn dispatch(cmd: &Command, s: &Settings) -> Result<()> {
    match cmd {
        Command::Map { dist, reference } => commands::cmd_map(s, dist, reference),
        Command::Synth => commands::cmd_synth(s),
        Command::Labels => commands::cmd_labels(s),
        Command::TrainGen => commands::cmd_train_gen(s),
        Command::TrainPool => commands::cmd_train_pool(s),
        Command::Predict { image } => commands::cmd_predict(s, image),
        Command::Eval => commands::cmd_eval(s),
        Command::Study => commands::cmd_study(s),
    }
}
