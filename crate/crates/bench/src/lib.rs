//! Fixed inputs shared by the benchmarks.

use tdvqa::{generate_td, GenContext, Task, TimingDiagram};

/// One generated diagram per (task, scenario, seed) in a small grid.
pub fn diagrams(seeds: u64) -> Vec<(Task, TimingDiagram, GenContext)> {
    let mut out = Vec::new();
    for task in Task::ALL {
        for &scenario in task.scenarios() {
            for seed in 0..seeds {
                let (td, ctx) = generate_td(task, scenario, seed).expect("generation succeeds for declared scenarios");
                out.push((task, td, ctx));
            }
        }
    }
    out
}

/// A synthetic VCD with `cycles` clock periods and a counting bus.
pub fn counter_vcd(cycles: u64) -> String {
    let mut s = String::from("$timescale 1ns $end\n$scope module tb $end\n$var wire 1 ! clk $end\n$var reg 8 # cnt $end\n$upscope $end\n$enddefinitions $end\n");
    // the clock starts low so the first rise is a real edge
    for c in 0..cycles {
        s.push_str(&format!("#{}\n0!\n#{}\n1!\nb{:b} #\n", c * 10, c * 10 + 5, c % 256));
    }
    s
}
