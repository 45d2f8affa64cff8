#pragma once

#include <memory>

#include "x2x/backend.hpp"

namespace x2x {

std::unique_ptr<Backend> make_http_chat_backend(const BackendDescriptor& descriptor);
std::unique_ptr<Backend> make_subprocess_backend(const BackendDescriptor& descriptor);

}  // namespace x2x
