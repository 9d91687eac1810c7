use clap::Parser;
use lobtrend_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcomes) => {
            for o in outcomes {
                let state = if o.skipped { "skipped" } else { "done" };
                println!("{:<8} {state:<8} {}", o.stage.name(), o.dir.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
