#pragma once

#include <stdexcept>
#include <string>

namespace udar {

/// Precondition or shape-contract failure in a public operation.
class ContractViolation : public std::logic_error {
public:
    explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

/// Non-finite values or out-of-domain numeric inputs.
class NumericDomainError : public std::runtime_error {
public:
    explicit NumericDomainError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file; carries a line number when one is known.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : std::runtime_error(file + ":" + std::to_string(line) + ": " + what) {}
};

/// Missing or ill-typed field in a structured config file.
class SchemaError : public std::runtime_error {
public:
    explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

/// Unreadable, unwritable, or missing file.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Unrecognized or version-incompatible on-disk format (checkpoints, datasets).
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace udar
