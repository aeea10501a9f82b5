#pragma once

#include <stdexcept>
#include <string>

namespace coplanner {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad input or configuration: missing files, empty datasets, unknown names.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Tensor dimensions disagree. The message names the offending tensor.
class ShapeError : public Error {
public:
    using Error::Error;
};

// API misuse, e.g. a backward pass fed a cache from a different forward call.
class UsageError : public Error {
public:
    using Error::Error;
};

// Numerical failure during optimization (non-finite gradients or ratios).
class TrainingError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

// The backend answered with a non-2xx status.
class BackendError : public Error {
public:
    BackendError(int status, std::string body_excerpt)
        : Error("backend returned HTTP " + std::to_string(status) + ": " + body_excerpt),
          status_(status),
          body_(std::move(body_excerpt)) {}

    int status() const noexcept { return status_; }
    const std::string& body_excerpt() const noexcept { return body_; }

    // Servers report prompt overflow as 400 with a message about context length.
    bool is_context_overflow() const noexcept {
        return status_ == 400 && (body_.find("context") != std::string::npos ||
                                  body_.find("too long") != std::string::npos);
    }

private:
    int status_;
    std::string body_;
};

// The request never produced an HTTP response. Raised after all retries are spent.
class TransportError : public Error {
public:
    TransportError(const std::string& what, int attempts)
        : Error(what + " (after " + std::to_string(attempts) + " attempts)"), attempts_(attempts) {}

    int attempts() const noexcept { return attempts_; }

private:
    int attempts_;
};

}  // namespace coplanner
