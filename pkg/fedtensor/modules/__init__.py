# Modules for the typed federated tensor language
