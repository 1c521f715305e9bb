#pragma once

#include <stdexcept>
#include <string>

namespace samba {

/// Invalid input data: shapes, label codes, out-of-range prompts.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (model heads, phantom geometry, schema).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A prerequisite file or directory is absent.
class MissingArtifactError : public std::runtime_error {
public:
    explicit MissingArtifactError(const std::string& path)
        : std::runtime_error("missing artifact: " + path), path_(path) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

enum class FormatErrorKind {
    BadMagic,
    VersionMismatch,
    ShapeMismatch,
    PayloadLength,
    UnknownModality,
    Metadata,
    Io,
};

/// Malformed on-disk container (SVOL or checkpoint).
class FormatError : public std::runtime_error {
public:
    FormatError(FormatErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}
    FormatErrorKind kind() const { return kind_; }

private:
    FormatErrorKind kind_;
};

}  // namespace samba
