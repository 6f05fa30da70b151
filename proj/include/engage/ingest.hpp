#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "engage/pose.hpp"

namespace engage::ingest {

/// Parses the skeleton JSONL format:
///   line 1:  {"meta": {"width": <int>, "height": <int>, "fps": <real>}}
///   line 2+: {"frame": <int>, "persons": [{"kp": [[x,y,c], ... 17]}]}
///
/// Throws engage::Error with the offending 1-based line number:
///   malformed_line, confidence_out_of_range, non_monotonic_frame_index,
///   empty_session.
SessionStream parse_session(std::istream& in);
SessionStream parse_session_file(const std::filesystem::path& path);

void serialize_session(const SessionStream& session, std::ostream& out);
std::string serialize_session(const SessionStream& session);
void write_session_file(const SessionStream& session, const std::filesystem::path& path);

}  // namespace engage::ingest
