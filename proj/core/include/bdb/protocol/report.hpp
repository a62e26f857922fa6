#pragma once

#include "bdb/protocol/record.hpp"

#include <filesystem>
#include <vector>

namespace bdb::protocol {

/// Renders, from successful records:
///   cacc_vs_asr.svg   C-Acc against ASR, defenses as colours, attacks as markers
///   racc_vs_asr.svg   R-Acc against ASR with the ASR + R-Acc = 100 line
///   ratio_<defense>.svg   ASR against poisoning ratio, one curve per attack
/// Returns the written paths.
std::vector<std::filesystem::path> render_report(const std::vector<ResultRecord>& records,
                                                 const std::filesystem::path& out_dir);

}  // namespace bdb::protocol
