#![no_main]

use libfuzzer_sys::fuzz_target;
use prl::gridworld::{compile_mdp, MazeSpec};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(maze) = MazeSpec::parse(text) {
        let again = MazeSpec::parse(&maze.to_text()).expect("printed maze parses");
        assert_eq!(again, maze);
        if maze.n_cells() <= 4096 {
            let _ = compile_mdp(&maze, 0.9);
        }
    }
});
