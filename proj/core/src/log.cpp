#include "civic/log.hpp"

#include <iostream>

namespace civic::log {
namespace {
Sink& sink_ref() {
    static Sink sink = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
    return sink;
}
}  // namespace

Sink set_warning_sink(Sink sink) {
    Sink previous = std::move(sink_ref());
    sink_ref() = std::move(sink);
    return previous;
}

void warn(const std::string& message) {
    if (sink_ref()) sink_ref()(message);
}
}  // namespace civic::log
