use clap::Parser;

fn main() {
    let cli = cafnet_cli::Cli::parse();
    let code = cafnet_cli::run(&cli, &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
