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

#ifndef STREAMLAT_TEXTIO_HPP_
#define STREAMLAT_TEXTIO_HPP_

// Small helpers shared by the text file formats.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace streamlat::textio {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest "%.17g" rendering; parses back to the identical double.
std::string FormatExact(double v);
/// Fixed-point rendering for reports and CSV cells.
std::string FormatFixed(double v, int digits = 6);
/// Whole-string strtod; throws FormatError on trailing junk.
double ParseDouble(std::string_view s);
long long ParseInt(std::string_view s);

std::vector<std::string> Split(std::string_view s, char sep);
std::string_view Trim(std::string_view s);

std::string ReadFile(const std::filesystem::path& path);
/// Writes through a temporary file and renames, creating parent directories.
void WriteFile(const std::filesystem::path& path, std::string_view contents);

}  // namespace streamlat::textio

#endif  // STREAMLAT_TEXTIO_HPP_
