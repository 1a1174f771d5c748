fn main() {
    let verbosity = std::env::args()
        .take_while(|a| a != "--")
        .map(|a| match a.as_str() {
            "--verbose" => 1,
            s if s.starts_with('-') && !s.starts_with("--") => s.matches('v').count(),
            _ => 0,
        })
        .sum::<usize>();
    let level = match verbosity {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    std::process::exit(overflow_probe::cli::run(std::env::args_os()));
}
