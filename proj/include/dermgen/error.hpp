#pragma once

#include <stdexcept>
#include <string>

namespace dermgen {

enum class Errc {
    // spec / config parsing
    missing_field,
    duplicate_label,
    empty_pool,
    malformed_file,
    invalid_config,
    invalid_argument,
    // generation backends
    backend_unavailable,
    backend_rejected,
    decode_error,
    auth_error,
    // filesystem / datasets
    io_error,
    empty_class,
    unreadable_image,
    mask_out_of_bounds,
    insufficient_class_size,
    // training / evaluation
    manifest_mismatch,
    label_mismatch,
    incompatible_checkpoint,
    unknown_class,
};

const char* errc_name(Errc c);

/// True for errors that indicate bad user input (config, spec files, CLI
/// arguments) rather than a failure while executing a pipeline stage.
/// Drives the CLI exit code: validation -> 1, runtime -> 2.
bool is_validation_error(Errc c);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    Errc code() const { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool cond, Errc code, const std::string& message) {
    if (!cond) raise(code, message);
}

inline const char* errc_name(Errc c) {
    switch (c) {
        case Errc::missing_field: return "MissingField";
        case Errc::duplicate_label: return "DuplicateLabel";
        case Errc::empty_pool: return "EmptyPool";
        case Errc::malformed_file: return "MalformedFile";
        case Errc::invalid_config: return "InvalidConfig";
        case Errc::invalid_argument: return "InvalidArgument";
        case Errc::backend_unavailable: return "BackendUnavailable";
        case Errc::backend_rejected: return "BackendRejected";
        case Errc::decode_error: return "DecodeError";
        case Errc::auth_error: return "AuthError";
        case Errc::io_error: return "IoError";
        case Errc::empty_class: return "EmptyClass";
        case Errc::unreadable_image: return "UnreadableImage";
        case Errc::mask_out_of_bounds: return "MaskOutOfBounds";
        case Errc::insufficient_class_size: return "InsufficientClassSize";
        case Errc::manifest_mismatch: return "ManifestMismatch";
        case Errc::label_mismatch: return "LabelMismatch";
        case Errc::incompatible_checkpoint: return "IncompatibleCheckpoint";
        case Errc::unknown_class: return "UnknownClass";
    }
    return "Error";
}

inline bool is_validation_error(Errc c) {
    switch (c) {
        case Errc::missing_field:
        case Errc::duplicate_label:
        case Errc::empty_pool:
        case Errc::malformed_file:
        case Errc::invalid_config:
        case Errc::invalid_argument:
        case Errc::unknown_class:
            return true;
        default:
            return false;
    }
}

} // namespace dermgen
