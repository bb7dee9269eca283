// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace magda {

/// Root of every error the engine raises. Callers that only need a message
/// can catch this; the subclasses carry structured detail for traces.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// A documented precondition of an operation was violated by the caller.
class PreconditionError : public Error
{
public:
    using Error::Error;
};

class FileNotFound : public Error
{
public:
    explicit FileNotFound(const std::string& path)
        : Error("file not found: " + path), path_(path)
    {
    }

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Malformed input document. line() is 1-based; 0 means the problem is
/// structural and not tied to one line.
class ParseError : public Error
{
public:
    ParseError(std::size_t line, const std::string& reason)
        : Error(line ? "parse error at line " + std::to_string(line) + ": " + reason : "parse error: " + reason),
          line_(line), reason_(reason)
    {
    }

    std::size_t line() const noexcept { return line_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    std::size_t line_;
    std::string reason_;
};

class ValidationError : public Error
{
public:
    using Error::Error;
};

/// Configuration problem; key() is the dotted path of the offending entry.
class ConfigError : public Error
{
public:
    ConfigError(const std::string& key, const std::string& reason)
        : Error("config error [" + key + "]: " + reason), key_(key)
    {
    }

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

class ManifestError : public Error
{
public:
    using Error::Error;
};

/// Transport-level failure talking to a backend. Retryable.
class BackendError : public Error
{
public:
    explicit BackendError(const std::string& what, int attempts = 1)
        : Error(what), attempts_(attempts)
    {
    }

    int attempts() const noexcept { return attempts_; }
    void set_attempts(int attempts) noexcept { attempts_ = attempts; }

private:
    int attempts_;
};

class Timeout : public BackendError
{
public:
    using BackendError::BackendError;
};

/// The service answered, but not in the expected shape. Not retried.
class ProtocolError : public Error
{
public:
    using Error::Error;
};

class UnsupportedByBackend : public Error
{
public:
    using Error::Error;
};

class NotFound : public Error
{
public:
    using Error::Error;
};

class DimensionMismatch : public Error
{
public:
    using Error::Error;
};

class ZeroVector : public Error
{
public:
    using Error::Error;
};

class AnswerNotFound : public Error
{
public:
    using Error::Error;
};

class ExtractionEmpty : public Error
{
public:
    using Error::Error;
};

class MissingGroundTruth : public Error
{
public:
    using Error::Error;
};

class NotSingleLabel : public Error
{
public:
    using Error::Error;
};

class EmptyTailSet : public Error
{
public:
    using Error::Error;
};

class PatientNotFound : public Error
{
public:
    using Error::Error;
};

} // namespace magda
