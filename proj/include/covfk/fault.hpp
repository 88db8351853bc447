#pragma once

#include <string>

namespace covfk {

// Fault injection hooks for the validate command's mutation tests.
enum class Fault { none, christoffel_sign, berezin_sign };

Fault active_fault() noexcept;
void set_fault(Fault f) noexcept;
Fault fault_from_name(const std::string& name);

} // namespace covfk
