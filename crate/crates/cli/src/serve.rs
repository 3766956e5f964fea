use std::io::{self, BufWriter};
use std::path::PathBuf;

use anyhow::Result;
use embkit::encoder::{external::serve, Encoder};

use crate::encoders::{hashing, load_encoder_model};
use crate::Outcome;

#[derive(clap::Args, Debug)]
#[group(required = true, multiple = false)]
struct Source {
    /// Checkpoint directory or model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Parameter-free hashing encoder of the given dimension.
    #[arg(long)]
    hashing: Option<usize>,
}

#[derive(clap::Args)]
pub struct Args {
    #[command(flatten)]
    source: Source,
}

/// Writes the handshake, then answers one request line per response line
/// until stdin closes.
pub fn run(args: Args) -> Result<Outcome> {
    let encoder: Box<dyn Encoder> = match args.source {
        Source { model: Some(p), .. } => Box::new(load_encoder_model(&p)?.0),
        Source {
            hashing: Some(d), ..
        } => Box::new(hashing(d)?),
        _ => unreachable!("clap enforces exactly one source"),
    };
    let stdin = io::stdin().lock();
    let stdout = BufWriter::new(io::stdout().lock());
    serve(encoder.as_ref(), stdin, stdout)?;
    Ok(Outcome::Ok)
}
