//! Command-line interface: `theta eval|jet|reduce|tail-table|bench`.

/// Run the CLI; returns the process exit code.
pub fn run() -> i32 {
    eprintln!("theta: not yet wired");
    2
}
