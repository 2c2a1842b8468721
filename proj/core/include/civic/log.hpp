#pragma once

#include <functional>
#include <string>

namespace civic::log {

using Sink = std::function<void(const std::string&)>;

/// Replaces the warning sink (stderr by default); returns the previous one.
Sink set_warning_sink(Sink sink);

void warn(const std::string& message);

}  // namespace civic::log
