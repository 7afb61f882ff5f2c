#pragma once

// Command-line front end: train, eval, decode, experiment, norms, synth.
//
// Every command merges an optional JSON config (--config) with flag
// overrides, writes the resolved config to <out>/config.json and is
// deterministic given that config. Config schema (all keys optional):
//
//   {
//     "seed": 1,
//     "out": "runs/a",
//     "data": {"train": DIR, "valid": DIR, "test": DIR, "alphabet": "0123456789 "},
//     "architecture": { see ArchitectureSpec json },
//     "training": { see TrainConfig json },
//     "experiment": {"preset": "fig3" | "table3",
//                    "configs": [{"name": ..., "architecture": {...}}]},
//     "eval": {"checkpoint": FILE, "data": DIR, "posteriors": FILE, "isolated": false},
//     "decode": {"lexicon": FILE, "lm": FILE, "priors": FILE,
//                "omega": 1, "wip": 1, "kappa": 0, "beam": null,
//                "tune": {"omegas": [...], "wips": [...], "kappas": [...]}},
//     "synth": {"train": 800, "valid": 200, "test": 0, font fields...}
//   }
//
// A dataset DIR holds the images and a transcripts.txt.

#include <iosfwd>
#include <string>
#include <vector>

namespace mdrnn {

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumerical = 4,
};

/// Runs one command line (args exclude the program name). Progress and
/// warnings go to `err`, reports to `out`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mdrnn
