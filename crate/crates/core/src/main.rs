fn main() { std::process::exit(ldstack::cli::main()) }
