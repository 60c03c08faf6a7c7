# Shared configuration
