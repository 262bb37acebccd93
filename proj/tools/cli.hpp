// Copyright 2026 The streamlat Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef STREAMLAT_TOOLS_CLI_HPP_
#define STREAMLAT_TOOLS_CLI_HPP_

#include <ostream>
#include <string>
#include <vector>

namespace streamlat::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "STREAMLAT_OUTPUT_ROOT";

/// Entry point behind `streamlat`. args excludes the program name.
int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace streamlat::cli

#endif  // STREAMLAT_TOOLS_CLI_HPP_
