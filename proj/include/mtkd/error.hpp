#pragma once

#include <stdexcept>
#include <string>

namespace mtkd {

// All library errors carry the subsystem that raised them so the CLI can
// print the machine-parsable "ERROR <module>: <what>" line.
class Error : public std::runtime_error {
public:
    Error(std::string module, const std::string& what)
        : std::runtime_error(what), module_(std::move(module)) {}

    const std::string& module() const { return module_; }

private:
    std::string module_;
};

[[noreturn]] inline void fail(const std::string& module, const std::string& what) {
    throw Error(module, what);
}

} // namespace mtkd
