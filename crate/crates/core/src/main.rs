fn main() {
    std::process::exit(setchoice::cli::run(std::env::args_os()));
}
