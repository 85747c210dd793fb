use std::process::ExitCode;

fn main() -> ExitCode {
    // a panic is a bug, but it must still surface as a usage-class failure
    let code = std::panic::catch_unwind(|| sf_sampler_cli::main_with_args(std::env::args_os())).unwrap_or(2);
    ExitCode::from(code as u8)
}
