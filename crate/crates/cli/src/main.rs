use std::io::Write;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let mut out = stdout.lock();
    let mut err = stderr.lock();
    let code = {
        let mut ctx = planedit::Context {
            env: std::env::vars().collect(),
            transport: None,
            stdout: &mut out,
            stderr: &mut err,
        };
        planedit::run(std::env::args_os(), &mut ctx)
    };
    let _ = out.flush();
    std::process::exit(code);
}
