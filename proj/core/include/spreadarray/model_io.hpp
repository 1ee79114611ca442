#pragma once

// Model specification files (JSON, "spec_version": 1). Probabilities and real
// values are decimal strings written in shortest round-trip form.

#include <string>

#include "spreadarray/errors.hpp"
#include "spreadarray/models.hpp"

namespace spreadarray {

inline constexpr int kModelSpecVersion = 1;

class ModelParseError : public InvalidArgument {
 public:
  ModelParseError(const std::string& what, int line, int column)
      : InvalidArgument(what), line_(line), column_(column) {}
  int line() const { return line_; }      // 0 when the error is structural
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

std::string format_decimal(double v);
double parse_decimal(const std::string& s);

ArrayModel parse_model(const std::string& text);
ArrayModel load_model(const std::string& path);
std::string dump_model(const ArrayModel& model);

}  // namespace spreadarray
