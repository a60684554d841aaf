use stampnet_harness::cli;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() {
        eprint!("{}", cli::USAGE);
        std::process::exit(2);
    }
    if let Err(e) = cli::dispatch(&args) {
        eprintln!("error: {e}");
        std::process::exit(cli::exit_code(&e));
    }
}
