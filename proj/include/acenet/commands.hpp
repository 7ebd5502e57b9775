#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "acenet/model.hpp"

namespace acenet {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitFormat = 2, kExitNumeric = 3 };

/// Entry point of the `acenet` tool. `args` excludes the program name.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct VariantRow {
  std::string name;
  ACEnetConfig config;
  std::size_t params = 0;
};

/// The seven architecture variants in ablation order: baseline (no context
/// encoder, s=0), s=0, s=0+skull, s=5, s=5+skull, parallel, parallel+skull.
std::vector<VariantRow> ablation_variants(const ACEnetConfig& base);

}  // namespace acenet
