#pragma once

namespace churnkit {

// Full command-line interface. Returns the process exit status; throws only
// on internal errors (the caller converts exceptions to exit code 1).
//
// Subcommands: synth, churn, compare, sweep-lambda, bo-lambda, bo-loop,
// triage, nscale, overlap, footprint, report. Global flags: --config,
// -D key=value, --seed, --jobs, --out.
int run_cli(int argc, const char* const* argv);

}  // namespace churnkit
