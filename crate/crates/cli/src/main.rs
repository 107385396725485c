use clap::Parser;

fn main() -> anyhow::Result<()> {
    rcb_cli::cli::run(rcb_cli::cli::Cli::parse())
}
