#include "textpix/error.hpp"

namespace textpix {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::shape: return "shape";
        case ErrorKind::config: return "config";
        case ErrorKind::data: return "data";
        case ErrorKind::io: return "io";
        case ErrorKind::numeric: return "numeric";
        case ErrorKind::contract: return "contract";
    }
    return "unknown";
}

}  // namespace textpix
