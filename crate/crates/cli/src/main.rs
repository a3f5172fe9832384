//! `splatvox` command-line driver.
//!
//! Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure.

mod common;
mod eval;
mod fuse;
mod render;
mod stream;
mod synth;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use common::UsageError;

#[derive(Parser)]
#[command(name = "splatvox", version, about = "Splat-voxel fuse-and-refine pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a splat set into every camera of a camera file.
    Render(render::RenderArgs),
    /// Deposit splat sets into the target-frustum grid and refine them.
    Fuse(fuse::FuseArgs),
    /// Run history-aware streaming fusion over a multi-view frame sequence.
    Stream(stream::StreamArgs),
    /// Write a synthetic scene with cameras, ground-truth renders and motion.
    GenSynthetic(synth::GenArgs),
    /// Compare a rendered sequence against ground truth.
    Eval(eval::EvalArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<splatvox::Error>() {
        Some(e) if e.is_numeric() => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Render(a) => render::run(a),
        Command::Fuse(a) => fuse::run(a),
        Command::Stream(a) => stream::run(a),
        Command::GenSynthetic(a) => synth::run(a),
        Command::Eval(a) => eval::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
