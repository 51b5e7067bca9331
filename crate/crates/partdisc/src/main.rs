use std::process::ExitCode;

fn main() -> ExitCode {
    match std::panic::catch_unwind(|| partdisc::cli::run(std::env::args_os())) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        // the panic message has already been printed by the hook
        Err(_) => ExitCode::from(3),
    }
}
