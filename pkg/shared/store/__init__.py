# Shared embedded record store
